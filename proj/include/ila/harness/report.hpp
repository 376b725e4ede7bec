#pragma once

#include <cmath>
#include <filesystem>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ila/attacks/batch.hpp"
#include "ila/harness/batch_io.hpp"
#include "ila/io.hpp"
#include "ila/models/model.hpp"
#include "ila/parallel.hpp"
#include "json.hpp"

namespace ila::harness {

/// One accuracy measurement: `target` evaluated on the output of `attack`
/// crafted against `source` (at `layer` for intermediate-level attacks).
struct ReportRow {
  std::string source;
  std::string attack;
  std::string target;
  std::optional<std::size_t> layer;
  double accuracy = 0;  // percent
  std::size_t n = 0;

  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

/// Source x target accuracies. Clean accuracy appears as attack "clean".
struct TransferReport {
  std::string manifest;  // reference to the manifest that produced it
  std::optional<std::size_t> selected_layer;
  std::vector<ReportRow> rows;

  friend bool operator==(const TransferReport&, const TransferReport&) = default;

  /// Accuracy of `target` on `attack` (and `layer`, when given).
  std::optional<double> find(const std::string& attack, const std::string& target,
                             std::optional<std::size_t> layer = {}) const {
    for (const auto& r : rows)
      if (r.attack == attack && r.target == target && r.layer == layer) return r.accuracy;
    return std::nullopt;
  }
};

inline void to_json(nlohmann::json& j, const ReportRow& r) {
  j = {{"source", r.source}, {"attack", r.attack}, {"target", r.target},
       {"layer", r.layer ? nlohmann::json(*r.layer) : nlohmann::json(nullptr)},
       {"accuracy", r.accuracy}, {"n", r.n}};
}
inline void from_json(const nlohmann::json& j, ReportRow& r) {
  r.source = j.at("source").get<std::string>();
  r.attack = j.at("attack").get<std::string>();
  r.target = j.at("target").get<std::string>();
  r.layer.reset();
  if (!j.at("layer").is_null()) r.layer = j.at("layer").get<std::size_t>();
  r.accuracy = j.at("accuracy").get<double>();
  r.n = j.at("n").get<std::size_t>();
}

/// Four decimals, matching the CSV form, so a JSON round trip is exact.
inline double round4(double v) { return std::round(v * 1e4) / 1e4; }

inline std::string report_csv(const TransferReport& r) {
  std::ostringstream os;
  os << "source,attack,target,layer,accuracy,n\n" << std::fixed << std::setprecision(4);
  for (const auto& row : r.rows) {
    os << row.source << ',' << row.attack << ',' << row.target << ',';
    if (row.layer) os << *row.layer;
    os << ',' << row.accuracy << ',' << row.n << '\n';
  }
  return os.str();
}

inline nlohmann::json report_json(const TransferReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (auto row : r.rows) {
    row.accuracy = round4(row.accuracy);
    rows.push_back(row);
  }
  return {{"manifest", r.manifest},
          {"selected_layer",
           r.selected_layer ? nlohmann::json(*r.selected_layer) : nlohmann::json(nullptr)},
          {"rows", rows}};
}

inline TransferReport parse_report_json(const nlohmann::json& j) {
  TransferReport r;
  r.manifest = j.value("manifest", std::string());
  if (j.contains("selected_layer") && !j.at("selected_layer").is_null())
    r.selected_layer = j.at("selected_layer").get<std::size_t>();
  r.rows = j.at("rows").get<std::vector<ReportRow>>();
  return r;
}

enum class ReportFormat { kCsv, kJson };

inline ReportFormat parse_format(const std::string& s) {
  if (s == "csv") return ReportFormat::kCsv;
  if (s == "json") return ReportFormat::kJson;
  throw ConfigError("report format must be csv or json, got '" + s + "'");
}

/// Stable column order, 4 decimals. The manifest reference travels in the
/// JSON form; the CSV header is fixed.
inline void write_report(const TransferReport& r, const std::filesystem::path& path,
                         ReportFormat fmt) {
  io::write_text(path, fmt == ReportFormat::kCsv ? report_csv(r)
                                                 : report_json(r).dump(2) + "\n");
}

inline TransferReport read_report_json(const std::filesystem::path& path) {
  try {
    return parse_report_json(nlohmann::json::parse(io::read_text(path)));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("report " + path.string() + ": " + e.what(), 0);
  }
}

/// A model under evaluation and the name it is reported under.
template <class T>
struct NamedModel {
  std::string name;
  const models::Model<T>* model = nullptr;
};

template <class T>
std::size_t count_correct(const models::Model<T>& m, const engine::Tensor<T>& images,
                          const std::vector<int>& labels, const Exec& exec = {}) {
  std::vector<std::size_t> per_chunk((labels.size() + std::max<std::size_t>(1, exec.chunk) - 1) /
                                     std::max<std::size_t>(1, exec.chunk));
  for_each_chunk(labels.size(), exec, [&](std::size_t b, std::size_t e) {
    const auto pred = m.classify(images.slice_rows(b, e), e - b);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == labels[b + i];
    per_chunk[b / std::max<std::size_t>(1, exec.chunk)] = ok;
  });
  std::size_t total = 0;
  for (auto c : per_chunk) total += c;
  return total;
}

/// Layer an intermediate-level batch targeted, if its config names one.
template <class T>
std::optional<std::size_t> batch_layer(const attacks::AdversarialBatch<T>& b) {
  if (b.config.is_object() && b.config.contains("layer"))
    return b.config.at("layer").template get<std::size_t>();
  return std::nullopt;
}

/// Accuracy of every target on every batch, plus one clean row per target.
template <class T>
TransferReport transfer_matrix(const std::vector<const attacks::AdversarialBatch<T>*>& batches,
                               const std::vector<NamedModel<T>>& targets,
                               const Exec& exec = {}) {
  if (batches.empty()) throw ConfigError("transfer_matrix: no batches");
  if (targets.empty()) throw ConfigError("transfer_matrix: no target models");
  const auto& first = *batches.front();
  for (const auto* b : batches) require_shared_originals(first, *b, "transfer_matrix");
  for (const auto& t : targets) {
    if (t.model->spec().num_classes != targets.front().model->spec().num_classes) {
      throw ConfigError("transfer_matrix: target " + t.name + " has " +
                        std::to_string(t.model->spec().num_classes) + " classes, " +
                        targets.front().name + " has " +
                        std::to_string(targets.front().model->spec().num_classes));
    }
  }
  const std::size_t n = first.size();
  if (n == 0) throw InputError("transfer_matrix: empty batch");
  auto pct = [n](std::size_t ok) { return 100.0 * static_cast<double>(ok) / static_cast<double>(n); };
  TransferReport r;
  for (const auto& t : targets) {
    r.rows.push_back({first.source, "clean", t.name, std::nullopt,
                      pct(count_correct(*t.model, first.originals, first.labels, exec)), n});
  }
  for (const auto* b : batches) {
    for (const auto& t : targets) {
      r.rows.push_back({b->source, b->attack, t.name, batch_layer(*b),
                        pct(count_correct(*t.model, b->adversarials, b->labels, exec)), n});
    }
  }
  return r;
}

}  // namespace ila::harness
