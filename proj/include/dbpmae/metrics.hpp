#pragma once

#include <string>
#include <vector>

namespace dbp {

// One per-epoch row of the training log. wall_seconds is cumulative training
// time, validation excluded.
struct MetricsRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double mean_decorr_loss = 0.0;
  double wall_seconds = 0.0;
  double lr_W = 0.0;
  double lr_R = 0.0;
};

extern const char* const kMetricsHeader;

std::string format_metric(double v);  // 9 significant digits

// Writes the fixed header plus one row per record. A non-empty trailing
// comment (e.g. a divergence report) is appended as a final '#' line.
void export_metrics(const std::vector<MetricsRecord>& records, const std::string& path,
                    const std::string& trailing_comment = "");

std::vector<MetricsRecord> parse_metrics_csv(const std::string& path);

}  // namespace dbp
