#include "dbpmae/optim.hpp"

#include <cmath>
#include <numbers>

namespace dbp {

AdamW::AdamW(const std::vector<ParamView>& params, AdamWConfig config) : cfg_(config) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& p : params) {
    m_.push_back(Vector::Zero(p.size));
    v_.push_back(Vector::Zero(p.size));
  }
}

void AdamW::step(const std::vector<ParamView>& params, double lr) {
  if (params.size() != m_.size()) throw ShapeError("adamw_step: parameter list changed size");
  ++step_count_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
  for (size_t k = 0; k < params.size(); ++k) {
    const auto& p = params[k];
    if (m_[k].size() != p.size) throw ShapeError("adamw_step: shape mismatch for " + p.name);
    Eigen::Map<Vector> value(p.value, p.size);
    Eigen::Map<const Vector> grad(p.grad, p.size);
    if (!grad.allFinite())
      throw Error("adamw_step: non-finite gradient for parameter '" + p.name + "'");
    m_[k] = cfg_.beta1 * m_[k] + (1.0 - cfg_.beta1) * grad;
    v_[k] = cfg_.beta2 * v_[k] + (1.0 - cfg_.beta2) * grad.cwiseProduct(grad);
    // Decoupled decay, then the bias-corrected moment step.
    value -= (lr * cfg_.weight_decay) * value;
    value.array() -=
        lr * (m_[k].array() / bc1) / ((v_[k].array() / bc2).sqrt() + cfg_.epsilon);
  }
}

void AdamW::restore(long step_count, std::vector<Vector> m, std::vector<Vector> v) {
  if (m.size() != m_.size() || v.size() != v_.size())
    throw ShapeError("adamw restore: moment list size mismatch");
  step_count_ = step_count;
  m_ = std::move(m);
  v_ = std::move(v);
}

void ScheduleConfig::validate() const {
  if (warmup_epochs < 0 || total_epochs < 0) throw ConfigError("schedule: negative epoch count");
  if (warmup_epochs > total_epochs)
    throw ConfigError("schedule: warmup_epochs exceeds total_epochs");
  if (base_lr < 0 || min_lr < 0) throw ConfigError("schedule: negative learning rate");
}

double lr_at(const ScheduleConfig& s, double epoch) {
  if (epoch < 0) epoch = 0;
  if (epoch >= s.total_epochs) return s.min_lr;
  if (epoch < s.warmup_epochs)
    return s.base_lr * epoch / static_cast<double>(s.warmup_epochs);
  const double progress =
      (epoch - s.warmup_epochs) / static_cast<double>(s.total_epochs - s.warmup_epochs);
  return s.min_lr + 0.5 * (s.base_lr - s.min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

void dbp_step(const std::vector<SiteRef>& sites, double eta, double subsample_fraction,
              std::optional<int> stop_epoch, int epoch, Rng& rng) {
  if (stop_epoch && epoch >= *stop_epoch) return;
  if (eta == 0.0) return;  // zero-rate DBP degenerates to plain BP
  for (size_t i = 0; i < sites.size(); ++i) {
    DecorrelatedLinear* layer = sites[i].layer;
    if (!layer->decorr) continue;
    if (!layer->has_cache())
      throw StateError("dbp_step: site '" + sites[i].name + "' has no cached input");
    Rng site_rng = rng.fork(static_cast<uint64_t>(i));
    Matrix rows = subsample_rows(layer->cached_input(), subsample_fraction, site_rng);
    CorrelationEstimate est = off_diagonal_covariance(rows);
    try {
      update_decorrelation(*layer->decorr, est, eta);
    } catch (const DivergenceError& e) {
      throw DivergenceError(e.site_id, epoch, std::string(e.what()) + " (epoch " +
                                                  std::to_string(epoch) + ")");
    }
  }
}

}  // namespace dbp
