#include "integral_action/reports.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace integral_action {

using nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

json class_map(const std::map<int, double>& m) {
  json j = json::object();
  for (const auto& [c, v] : m) j[std::to_string(c)] = v;
  return j;
}

std::map<int, double> class_map_from(const json& j) {
  std::map<int, double> m;
  for (const auto& [k, v] : j.items()) m[std::stoi(k)] = v.get<double>();
  return m;
}

void csv_row(std::ostringstream& os, const MetricsReport& r, int num_classes) {
  os << r.name << ',' << r.variant << ',' << r.split << ',' << r.videos << ',' << fmt(r.top1) << ','
     << r.top_k << ',' << fmt(r.topk) << ',' << (r.gate_mean ? fmt(*r.gate_mean) : "") << ','
     << (r.gate_var ? fmt(*r.gate_var) : "");
  for (int c = 0; c < num_classes; ++c) {
    const auto it = r.per_class_top1.find(c);
    os << ',' << (it == r.per_class_top1.end() ? "" : fmt(it->second));
  }
  for (int c = 0; c < num_classes; ++c) {
    const auto it = r.per_class_gate_mean.find(c);
    os << ',' << (it == r.per_class_gate_mean.end() ? "" : fmt(it->second));
  }
  os << '\n';
}

void csv_header(std::ostringstream& os, int num_classes) {
  os << "name,variant,split,videos,top1,k,topk,gate_mean,gate_var";
  for (int c = 0; c < num_classes; ++c) os << ",top1_class" << c;
  for (int c = 0; c < num_classes; ++c) os << ",gate_class" << c;
  os << '\n';
}

}  // namespace

json to_json(const MetricsReport& r) {
  json j{{"name", r.name}, {"variant", r.variant}, {"split", r.split}, {"videos", r.videos},
         {"top1", r.top1}, {"top_k", r.top_k}, {"topk", r.topk}, {"per_class_top1", class_map(r.per_class_top1)}};
  if (r.gate_mean) j["gate_mean"] = *r.gate_mean;
  if (r.gate_var) j["gate_var"] = *r.gate_var;
  if (!r.per_class_gate_mean.empty()) j["per_class_gate_mean"] = class_map(r.per_class_gate_mean);
  return j;
}

MetricsReport metrics_report_from_json(const json& j) {
  MetricsReport r;
  r.name = j.value("name", "");
  r.variant = j.value("variant", "");
  r.split = j.value("split", "");
  r.videos = j.value("videos", std::size_t{0});
  r.top1 = j.at("top1").get<double>();
  r.top_k = j.at("top_k").get<int>();
  r.topk = j.at("topk").get<double>();
  if (j.contains("per_class_top1")) r.per_class_top1 = class_map_from(j["per_class_top1"]);
  if (j.contains("gate_mean")) r.gate_mean = j["gate_mean"].get<double>();
  if (j.contains("gate_var")) r.gate_var = j["gate_var"].get<double>();
  if (j.contains("per_class_gate_mean")) r.per_class_gate_mean = class_map_from(j["per_class_gate_mean"]);
  return r;
}

json to_json(const AblationReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows) {
    json j{{"name", row.name}, {"variant", row.variant}, {"in_context", to_json(row.in_context)},
           {"out_of_context", to_json(row.out_of_context)}};
    if (row.lambda) j["lambda"] = *row.lambda;
    if (row.gate_source) j["gate_source"] = *row.gate_source;
    if (row.weight) j["weight"] = *row.weight;
    rows.push_back(std::move(j));
  }
  return {{"rows", rows}, {"oracle_in_context", r.oracle_in}, {"oracle_out_of_context", r.oracle_out}};
}

json to_json(const GateStats& g) {
  return {{"mean", g.mean}, {"variance", g.variance}, {"per_class_mean", class_map(g.per_class_mean)},
          {"videos", g.per_video.size()}};
}

std::string metrics_csv(const std::vector<MetricsReport>& reports, int num_classes) {
  std::ostringstream os;
  csv_header(os, num_classes);
  for (const auto& r : reports) csv_row(os, r, num_classes);
  return os.str();
}

std::string ablation_csv(const AblationReport& report, int num_classes) {
  std::ostringstream os;
  csv_header(os, num_classes);
  for (const auto& row : report.rows) {
    csv_row(os, row.in_context, num_classes);
    csv_row(os, row.out_of_context, num_classes);
  }
  return os.str();
}

std::string gate_csv(const std::vector<VideoResult>& videos) {
  std::ostringstream os;
  os << "video_id,label,context,gate_mean\n";
  for (const auto& v : videos) {
    if (!v.gate_mean) throw std::invalid_argument("gate_csv: video " + v.video_id + " has no gate value");
    os << v.video_id << ',' << v.label << ',' << v.context << ',' << fmt(*v.gate_mean) << '\n';
  }
  return os.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_histogram_ppm(const std::filesystem::path& path, const std::vector<std::vector<double>>& series,
                         int bins, int width, int height) {
  if (bins < 1 || width < bins || height < 2) throw std::invalid_argument("histogram: bad geometry");
  static constexpr std::array<std::array<unsigned char, 3>, 4> kColours{
      {{{220, 60, 50}}, {{40, 110, 210}}, {{40, 160, 70}}, {{200, 150, 20}}}};
  std::vector<std::vector<double>> counts(series.size(), std::vector<double>(static_cast<std::size_t>(bins), 0.0));
  double peak = 0.0;
  for (std::size_t s = 0; s < series.size(); ++s) {
    for (double v : series[s]) {
      const int b = std::clamp(static_cast<int>(v * bins), 0, bins - 1);
      counts[s][static_cast<std::size_t>(b)] += 1.0 / std::max<std::size_t>(1, series[s].size());
    }
    for (double c : counts[s]) peak = std::max(peak, c);
  }
  std::vector<unsigned char> img(static_cast<std::size_t>(width) * height * 3, 255);
  const int bin_w = width / bins;
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& col = kColours[s % kColours.size()];
    for (int b = 0; b < bins; ++b) {
      const int bar = peak > 0 ? static_cast<int>(counts[s][static_cast<std::size_t>(b)] / peak * (height - 1)) : 0;
      for (int y = height - bar; y < height; ++y) {
        for (int x = b * bin_w; x < (b + 1) * bin_w; ++x) {
          auto* px = &img[(static_cast<std::size_t>(y) * width + x) * 3];
          // Overlapping series blend.
          for (int c = 0; c < 3; ++c) px[c] = static_cast<unsigned char>((px[c] + col[c]) / 2);
        }
      }
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P6\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
}

}  // namespace integral_action
