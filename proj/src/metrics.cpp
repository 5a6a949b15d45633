#include "dbpmae/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "dbpmae/common.hpp"

namespace dbp {

const char* const kMetricsHeader =
    "epoch,train_loss,val_loss,mean_decorr_loss,wall_seconds,lr_W,lr_R";

std::string format_metric(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

void export_metrics(const std::vector<MetricsRecord>& records, const std::string& path,
                    const std::string& trailing_comment) {
  std::ofstream out(path, std::ios::binary);  // '\n' endings on every platform
  if (!out) throw IoError("export_metrics: cannot open '" + path + "'");
  out << kMetricsHeader << "\n";
  for (const auto& r : records) {
    out << r.epoch << ',' << format_metric(r.train_loss) << ',' << format_metric(r.val_loss)
        << ',' << format_metric(r.mean_decorr_loss) << ',' << format_metric(r.wall_seconds)
        << ',' << format_metric(r.lr_W) << ',' << format_metric(r.lr_R) << "\n";
  }
  if (!trailing_comment.empty()) out << "# " << trailing_comment << "\n";
  if (!out) throw IoError("export_metrics: write failed for '" + path + "'");
}

std::vector<MetricsRecord> parse_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("parse_metrics_csv: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw IoError("parse_metrics_csv: empty file '" + path + "'");
  if (line != kMetricsHeader)
    throw IoError("parse_metrics_csv: unexpected header in '" + path + "'");
  std::vector<MetricsRecord> records;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream row(line);
    MetricsRecord r;
    char comma;
    if (!(row >> r.epoch >> comma >> r.train_loss >> comma >> r.val_loss >> comma >>
          r.mean_decorr_loss >> comma >> r.wall_seconds >> comma >> r.lr_W >> comma >> r.lr_R))
      throw IoError("parse_metrics_csv: malformed row '" + line + "'");
    records.push_back(r);
  }
  return records;
}

}  // namespace dbp
