#include <algorithm>

#include "superpose/cost_model.hpp"
#include "superpose/reference_model.hpp"

namespace superpose {

namespace {

ModelShape shape(std::string name, double params, std::uint32_t layers, std::uint32_t d_model,
                 std::uint32_t heads, std::uint32_t head_dim, std::uint32_t vocab, PositionScheme scheme,
                 std::uint32_t elem_bytes) {
  return {std::move(name), params, layers, d_model, heads, head_dim, vocab, scheme, elem_bytes};
}

}  // namespace

std::vector<ModelShape> builtin_model_presets() {
  auto ref_alibi = reference_shape(PositionScheme::alibi);
  auto ref_rotary = reference_shape(PositionScheme::rotary);
  return {
      shape("mpt-7b", 6.7e9, 32, 4096, 32, 128, 50432, PositionScheme::alibi, 2),
      shape("bloom-7b1", 7.07e9, 30, 4096, 32, 128, 250880, PositionScheme::alibi, 2),
      shape("bloomz-7b1", 7.07e9, 30, 4096, 32, 128, 250880, PositionScheme::alibi, 2),
      shape("bloomz-3b", 3.0e9, 30, 2560, 32, 80, 250880, PositionScheme::alibi, 2),
      // OpenELM varies heads per layer; this is the mean layout.
      shape("openelm-3b", 3.04e9, 36, 3072, 24, 128, 32000, PositionScheme::rotary, 2),
      ref_alibi,
      ref_rotary,
  };
}

std::vector<WorkloadSpec> builtin_workload_presets() {
  // Prompt lengths follow the default template; document lengths are the
  // dataset means rounded to whole tokens.
  return {
      uniform_workload("nq", 45, 20, 143, 13, 6, 5),
      uniform_workload("musique", 45, 20, 121, 20, 6, 5),
  };
}

ModelShape model_preset(std::string_view name) {
  const auto all = builtin_model_presets();
  auto it = std::find_if(all.begin(), all.end(), [&](const ModelShape& s) { return s.name == name; });
  if (it == all.end()) throw Error(ErrorCode::invalid_argument, "unknown model preset '" + std::string(name) + "'");
  return *it;
}

WorkloadSpec workload_preset(std::string_view name) {
  const auto all = builtin_workload_presets();
  auto it = std::find_if(all.begin(), all.end(), [&](const WorkloadSpec& w) { return w.name == name; });
  if (it == all.end()) throw Error(ErrorCode::invalid_argument, "unknown workload preset '" + std::string(name) + "'");
  return *it;
}

nlohmann::json presets_to_json() {
  nlohmann::json doc = {{"models", nlohmann::json::array()}, {"workloads", nlohmann::json::array()}};
  for (const auto& m : builtin_model_presets()) doc["models"].push_back(to_json(m));
  for (const auto& w : builtin_workload_presets()) doc["workloads"].push_back(to_json(w));
  return doc;
}

void load_presets_json(const nlohmann::json& doc, std::vector<ModelShape>& models,
                       std::vector<WorkloadSpec>& workloads) {
  if (!doc.contains("models") || !doc.contains("workloads")) {
    throw Error(ErrorCode::schema_error, "preset file needs \"models\" and \"workloads\"");
  }
  for (const auto& m : doc.at("models")) models.push_back(model_shape_from_json(m));
  for (const auto& w : doc.at("workloads")) workloads.push_back(workload_from_json(w));
}

}  // namespace superpose
