#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "integral_action/train_eval.hpp"

namespace integral_action {

nlohmann::json to_json(const MetricsReport& r);
MetricsReport metrics_report_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AblationReport& r);
nlohmann::json to_json(const GateStats& g);

// One header line plus one row per report; per-class accuracies as top1_class<i> columns.
std::string metrics_csv(const std::vector<MetricsReport>& reports, int num_classes);
std::string ablation_csv(const AblationReport& report, int num_classes);
// video_id,label,context,gate_mean
std::string gate_csv(const std::vector<VideoResult>& videos);

void write_text(const std::filesystem::path& path, const std::string& text);

// Binary PPM histogram of values in [0, 1]; one colour per series.
void write_histogram_ppm(const std::filesystem::path& path, const std::vector<std::vector<double>>& series,
                         int bins = 50, int width = 500, int height = 240);

}  // namespace integral_action
