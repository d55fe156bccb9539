#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "segplan/io.hpp"
#include "segplan/planner.hpp"

namespace segplan {

// Rows of strings rendered as aligned plain text or CSV.
struct TextTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> footnotes;
};

inline std::string render_text(const TextTable& t) {
  std::vector<std::size_t> width(t.header.size(), 0);
  auto widen = [&](const std::vector<std::string>& r) {
    for (std::size_t c = 0; c < r.size() && c < width.size(); ++c) width[c] = std::max(width[c], r[c].size());
  };
  widen(t.header);
  for (const auto& r : t.rows) widen(r);
  auto line = [&](const std::vector<std::string>& r) {
    std::string s;
    for (std::size_t c = 0; c < width.size(); ++c) {
      const std::string& cell = c < r.size() ? r[c] : std::string();
      s += cell;
      if (c + 1 < width.size()) s += std::string(width[c] - cell.size() + 2, ' ');
    }
    while (!s.empty() && s.back() == ' ') s.pop_back();
    return s + "\n";
  };
  std::string out = line(t.header);
  std::vector<std::string> rule;
  for (std::size_t w : width) rule.push_back(std::string(w, '-'));
  out += line(rule);
  for (const auto& r : t.rows) out += line(r);
  if (!t.footnotes.empty()) {
    out += "\n";
    for (const auto& f : t.footnotes) out += f + "\n";
  }
  return out;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

inline std::string render_csv(const TextTable& t) {
  auto line = [](const std::vector<std::string>& r) {
    std::string s;
    for (std::size_t c = 0; c < r.size(); ++c) s += (c ? "," : "") + csv_field(r[c]);
    return s + "\n";
  };
  std::string out = line(t.header);
  for (const auto& r : t.rows) out += line(r);
  return out;
}

inline std::string join_dims(const std::vector<std::size_t>& v, const char* sep) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + std::to_string(v[i]);
  return s;
}

// ---------------------------------------------------------------------------
// Topology table
// ---------------------------------------------------------------------------

// Free-text notes keyed by (dataset, row), row being "2D", "3D" or "lowres".
using TopologyNotes = std::map<std::pair<std::string, std::string>, std::string>;

inline TextTable topology_table(const std::vector<PipelinePlan>& plans, const TopologyNotes& notes = {}) {
  TextTable t;
  t.header = {"dataset", "model", "median shape", "patch size", "batch", "pools", "note"};
  auto add = [&](const std::string& dataset, const std::string& row, const Extent* median, const TopologySpec* topo) {
    std::string note;
    const auto it = notes.find({dataset, row});
    if (it != notes.end()) {
      note = "(" + std::to_string(t.footnotes.size() + 1) + ")";
      t.footnotes.push_back(note + " " + dataset + " " + row + ": " + it->second);
    }
    if (topo == nullptr) {
      t.rows.push_back({dataset, row, "-", "-", "-", "-", note});
      return;
    }
    t.rows.push_back({dataset, row, join_dims(*median, "x"), join_dims(topo->patch_size, "x"),
                      std::to_string(topo->batch_size), join_dims(topo->pools_per_axis, "/"), note});
  };
  for (const PipelinePlan& p : plans) {
    Extent median_2d;
    for (std::size_t a : p.topo_2d.axes) median_2d.push_back(p.median_shape[a]);
    add(p.dataset_name, "2D", &median_2d, p.has(ModelKind::u2d) ? &p.topo_2d : nullptr);
    add(p.dataset_name, "3D", &p.median_shape, p.has(ModelKind::u3d) ? &p.topo_3d : nullptr);
    add(p.dataset_name, "lowres", p.lowres_median_shape ? &*p.lowres_median_shape : nullptr,
        p.topo_lowres && p.lowres_median_shape ? &*p.topo_lowres : nullptr);
  }
  return t;
}

inline std::string render_topology_table(const std::vector<PipelinePlan>& plans, const TopologyNotes& notes = {}) {
  return render_text(topology_table(plans, notes));
}

inline std::string render_topology_csv(const std::vector<PipelinePlan>& plans, const TopologyNotes& notes = {}) {
  return render_csv(topology_table(plans, notes));
}

// Reads {"dataset": {"2d"|"3d"|"lowres": {"deviation": "..."}}} documents.
inline TopologyNotes topology_notes_from_json(const json& doc) {
  TopologyNotes notes;
  const std::map<std::string, std::string> rows{{"2d", "2D"}, {"3d", "3D"}, {"lowres", "lowres"}};
  for (const auto& [dataset, entry] : doc.items()) {
    if (!entry.is_object()) continue;
    for (const auto& [key, row] : rows) {
      if (entry.contains(key) && entry.at(key).is_object() && entry.at(key).contains("deviation")) {
        notes[{dataset, row}] = entry.at(key).at("deviation").get<std::string>();
      }
    }
  }
  return notes;
}

// ---------------------------------------------------------------------------
// Dice table
// ---------------------------------------------------------------------------

inline std::string format_dice(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

// One row per candidate of each run-cv metrics document; the selected
// candidate carries a trailing '*'.
inline TextTable dice_table(const std::vector<json>& metrics) {
  std::size_t max_fg = 0;
  for (const json& m : metrics) {
    for (const auto& [id, c] : m.at("candidates").items()) max_fg = std::max(max_fg, c.at("per_class").size());
  }
  TextTable t;
  t.header = {"dataset", "model"};
  for (std::size_t k = 1; k <= max_fg; ++k) t.header.push_back("class " + std::to_string(k));
  t.header.push_back("mean");
  for (const json& m : metrics) {
    const std::string selected = m.value("selected", std::string{});
    for (const auto& [id, c] : m.at("candidates").items()) {
      std::vector<std::string> row{m.at("dataset").get<std::string>(), id + (id == selected ? " *" : "")};
      const auto per_class = c.at("per_class").get<std::vector<double>>();
      for (std::size_t k = 0; k < max_fg; ++k) row.push_back(k < per_class.size() ? format_dice(per_class[k]) : "-");
      row.push_back(format_dice(c.at("mean_foreground").get<double>()));
      t.rows.push_back(std::move(row));
    }
  }
  return t;
}

inline std::string render_dice_table(const std::vector<json>& metrics) { return render_text(dice_table(metrics)); }

inline std::string render_dice_csv(const std::vector<json>& metrics) { return render_csv(dice_table(metrics)); }

}  // namespace segplan
