#include "odn/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <sstream>

#include "odn/error.hpp"

namespace odn {

namespace {

template <typename T>
std::string shortest(T value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  (void)ec;
  return std::string(buf, ptr);
}

Phase parse_phase(const std::string& s) {
  if (s == "warmup") return Phase::kWarmup;
  if (s == "search") return Phase::kSearch;
  if (s == "finetune") return Phase::kFinetune;
  fail(ErrorCode::kInvalidArgument, "unknown phase '" + s + "' in metrics file");
}

template <typename T>
T field(const std::string& s, int line) {
  T out{};
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    fail(ErrorCode::kInvalidArgument, "metrics line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return out;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
  return out;
}

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

void write_svg(const std::vector<EpochMetrics>& rows, const std::filesystem::path& path) {
  constexpr double kW = 720, kH = 360, kMargin = 40;
  const double n = static_cast<double>(std::max<std::size_t>(rows.size(), 2) - 1);
  auto x = [&](std::size_t i) { return kMargin + (kW - 2 * kMargin) * static_cast<double>(i) / n; };
  auto y = [&](double acc) { return kH - kMargin - (kH - 2 * kMargin) * std::clamp(acc, 0.0, 1.0); };

  auto out = open_out(path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<line x1=\"" << kMargin << "\" y1=\"" << kH - kMargin << "\" x2=\"" << kW - kMargin << "\" y2=\""
      << kH - kMargin << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << kMargin << "\" y1=\"" << kMargin << "\" x2=\"" << kMargin << "\" y2=\"" << kH - kMargin
      << "\" stroke=\"black\"/>\n";
  out << "<text x=\"4\" y=\"" << kMargin << "\" font-size=\"11\">1.0</text>\n";
  out << "<text x=\"4\" y=\"" << kH - kMargin << "\" font-size=\"11\">0.0</text>\n";
  out << "<text x=\"" << kW / 2 - 80 << "\" y=\"" << kH - 10
      << "\" font-size=\"12\">epoch (all phases) vs val accuracy</text>\n";

  std::size_t start = 0;
  while (start < rows.size()) {
    std::size_t end = start;
    while (end < rows.size() && rows[end].phase == rows[start].phase && rows[end].depth == rows[start].depth) ++end;
    const auto colour = kPalette[static_cast<std::size_t>(rows[start].depth) % std::size(kPalette)];
    out << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\""
        << (rows[start].phase == Phase::kWarmup ? " stroke-dasharray=\"4 3\"" : "") << " points=\"";
    for (std::size_t i = start; i < end; ++i) out << x(i) << ',' << y(rows[i].val_accuracy) << ' ';
    out << "\"/>\n";
    out << "<text x=\"" << x(start) << "\" y=\"" << y(rows[start].val_accuracy) - 4 << "\" font-size=\"10\" fill=\""
        << colour << "\">" << phase_name(rows[start].phase) << " d" << rows[start].depth << "</text>\n";
    start = end;
  }
  out << "</svg>\n";
}

}  // namespace

std::string format_metrics_row(const EpochMetrics& m, bool with_wall_time) {
  std::string row = std::to_string(m.depth) + ',' + std::to_string(m.epoch) + ',' + std::string(phase_name(m.phase)) +
                    ',' + shortest(m.train_loss) + ',' + shortest(m.val_accuracy) + ',' + shortest(m.lr) + ',';
  row += with_wall_time ? shortest(m.seconds) : "0";
  return row;
}

CsvMetricsSink::CsvMetricsSink(const std::filesystem::path& metrics_path, const std::filesystem::path& timing_path,
                               bool wall_time_in_metrics)
    : metrics_(open_out(metrics_path)), wall_time_in_metrics_(wall_time_in_metrics) {
  metrics_ << kMetricsHeader << '\n';
  metrics_.flush();
  if (!timing_path.empty()) {
    timing_ = open_out(timing_path);
    timing_ << "phase,depth,epoch,seconds\n";
  }
}

void CsvMetricsSink::on_epoch(const EpochMetrics& m) {
  history_.push_back(m);
  metrics_ << format_metrics_row(m, wall_time_in_metrics_) << '\n';
  metrics_.flush();
  if (timing_.is_open()) {
    timing_ << phase_name(m.phase) << ',' << m.depth << ',' << m.epoch << ',' << shortest(m.seconds) << '\n';
    timing_.flush();
  }
}

std::vector<EpochMetrics> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open metrics file '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    fail(ErrorCode::kInvalidArgument, "'" + path.string() + "' does not start with the metrics header");
  }
  std::vector<EpochMetrics> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 7) {
      fail(ErrorCode::kInvalidArgument, "metrics line " + std::to_string(line_no) + " has " +
                                            std::to_string(cells.size()) + " fields, expected 7");
    }
    EpochMetrics m;
    m.depth = field<int>(cells[0], line_no);
    m.epoch = field<int>(cells[1], line_no);
    m.phase = parse_phase(cells[2]);
    m.train_loss = field<double>(cells[3], line_no);
    m.val_accuracy = field<double>(cells[4], line_no);
    m.lr = field<float>(cells[5], line_no);
    m.seconds = field<double>(cells[6], line_no);
    rows.push_back(m);
  }
  return rows;
}

std::vector<std::filesystem::path> write_report(const std::vector<EpochMetrics>& rows,
                                                const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;

  std::map<std::pair<int, int>, std::vector<const EpochMetrics*>> groups;  // (phase, depth)
  for (const auto& r : rows) groups[{static_cast<int>(r.phase), r.depth}].push_back(&r);

  auto summary_path = out_dir / "depth_summary.csv";
  auto summary = open_out(summary_path);
  summary << "phase,depth,epochs,best_val_accuracy,best_epoch,final_lr,final_train_loss\n";
  for (const auto& [key, group] : groups) {
    const auto phase = phase_name(static_cast<Phase>(key.first));
    auto path = out_dir / ("curve_" + std::string(phase) + "_depth" + std::to_string(key.second) + ".csv");
    auto out = open_out(path);
    out << "epoch,train_loss,val_accuracy,lr\n";
    const EpochMetrics* best = group.front();
    for (const auto* m : group) {
      out << m->epoch << ',' << shortest(m->train_loss) << ',' << shortest(m->val_accuracy) << ',' << shortest(m->lr)
          << '\n';
      if (m->val_accuracy > best->val_accuracy) best = m;
    }
    written.push_back(path);
    summary << phase << ',' << key.second << ',' << group.size() << ',' << shortest(best->val_accuracy) << ','
            << best->epoch << ',' << shortest(group.back()->lr) << ',' << shortest(group.back()->train_loss) << '\n';
  }
  written.push_back(summary_path);

  auto svg_path = out_dir / "curves.svg";
  write_svg(rows, svg_path);
  written.push_back(svg_path);
  return written;
}

}  // namespace odn
