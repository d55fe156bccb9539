#pragma once

#include <algorithm>
#include <bit>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "segplan/errors.hpp"
#include "segplan/volume.hpp"

namespace segplan {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// .mvox container: one JSON header line, then the raw little-endian payload
// in C order (channel first, last spatial axis fastest).
// ---------------------------------------------------------------------------

inline std::string dtype_for(VolumeKind kind) {
  return kind == VolumeKind::labelmap ? "u8" : "f32";
}

inline std::string mvox_header(const Volume& v) {
  json header;
  header["dtype"] = dtype_for(v.kind);
  header["kind"] = std::string(to_string(v.kind));
  std::vector<std::size_t> shape{v.channels};
  shape.insert(shape.end(), v.extent.begin(), v.extent.end());
  header["shape"] = shape;
  header["spacing"] = v.spacing;
  return header.dump();
}

inline void write_volume(const Volume& v, const fs::path& path) {
  validate_geometry(v);
  std::string bytes = mvox_header(v);
  bytes.push_back('\n');
  if (v.kind == VolumeKind::labelmap) {
    bytes.reserve(bytes.size() + v.data.size());
    for (float x : v.data) {
      if (!(x >= 0.0f && x <= 255.0f && x == static_cast<float>(static_cast<int>(x)))) {
        throw ValidationError("labelmap value not representable as u8");
      }
      bytes.push_back(static_cast<char>(static_cast<std::uint8_t>(x)));
    }
  } else {
    const std::size_t offset = bytes.size();
    bytes.resize(offset + v.data.size() * 4);
    for (std::size_t i = 0; i < v.data.size(); ++i) {
      auto word = std::bit_cast<std::uint32_t>(v.data[i]);
      if constexpr (std::endian::native == std::endian::big) {
        word = __builtin_bswap32(word);
      }
      std::memcpy(bytes.data() + offset + 4 * i, &word, 4);
    }
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline Volume parse_volume(const std::string& bytes, const std::string& origin = "<memory>") {
  const auto newline = bytes.find('\n');
  if (newline == std::string::npos) throw IoError(origin + ": missing header line");
  json header;
  try {
    header = json::parse(bytes.substr(0, newline));
  } catch (const json::exception& e) {
    throw IoError(origin + ": malformed header: " + e.what());
  }
  Volume v;
  std::string dtype;
  std::vector<std::size_t> shape;
  try {
    dtype = header.at("dtype").get<std::string>();
    v.kind = parse_volume_kind(header.at("kind").get<std::string>());
    shape = header.at("shape").get<std::vector<std::size_t>>();
    v.spacing = header.at("spacing").get<Spacing>();
  } catch (const json::exception& e) {
    throw IoError(origin + ": bad header field: " + e.what());
  }
  if (dtype != "f32" && dtype != "u8") {
    throw IoError(origin + ": unknown dtype code '" + dtype + "'");
  }
  if (shape.size() < 2) throw IoError(origin + ": shape needs channel and spatial axes");
  v.channels = shape.front();
  v.extent.assign(shape.begin() + 1, shape.end());
  const std::size_t count = v.channels * product(v.extent);
  const std::size_t width = dtype == "u8" ? 1 : 4;
  const std::size_t available = bytes.size() - newline - 1;
  if (available < count * width) throw IoError(origin + ": truncated payload");
  if (available > count * width) throw IoError(origin + ": header/payload size mismatch");
  const char* payload = bytes.data() + newline + 1;
  v.data.resize(count);
  if (width == 1) {
    for (std::size_t i = 0; i < count; ++i) {
      v.data[i] = static_cast<float>(static_cast<std::uint8_t>(payload[i]));
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t word;
      std::memcpy(&word, payload + 4 * i, 4);
      if constexpr (std::endian::native == std::endian::big) {
        word = __builtin_bswap32(word);
      }
      v.data[i] = std::bit_cast<float>(word);
    }
  }
  try {
    validate_geometry(v);
  } catch (const ValidationError& e) {
    throw IoError(origin + ": " + e.what());
  }
  return v;
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

inline void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline Volume read_volume(const fs::path& path) {
  return parse_volume(read_file(path), path.string());
}

template <typename Json = json>
Json read_json(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return Json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": malformed JSON: " + e.what());
  }
}

template <typename Json>
void write_json(const fs::path& path, const Json& doc) {
  write_file(path, doc.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// dataset.json descriptor
// ---------------------------------------------------------------------------

struct TrainingCase {
  std::string id;
  fs::path image;
  fs::path label;
};

struct DatasetDescriptor {
  std::string name;
  std::map<int, std::string> modality;  // lower-cased
  std::map<int, std::string> labels;
  std::vector<TrainingCase> training_cases;
  std::size_t num_training = 0;

  std::size_t num_classes() const {
    return labels.empty() ? 0 : static_cast<std::size_t>(labels.rbegin()->first) + 1;
  }
  std::vector<int> foreground_classes() const {
    std::vector<int> out;
    for (const auto& [id, _] : labels) {
      if (id != 0) out.push_back(id);
    }
    return out;
  }
  bool is_ct() const {
    return std::any_of(modality.begin(), modality.end(), [](const auto& kv) {
      return kv.second.find("ct") != std::string::npos;
    });
  }
};

inline std::string lowercase(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

// Case identifier = file name without the container extension.
inline std::string case_id_from_path(const fs::path& image) {
  std::string stem = image.filename().string();
  for (const char* ext : {".mvox", ".nii.gz", ".nii"}) {
    const std::string e(ext);
    if (stem.size() > e.size() && stem.compare(stem.size() - e.size(), e.size(), e) == 0) {
      return stem.substr(0, stem.size() - e.size());
    }
  }
  return stem;
}

inline DatasetDescriptor parse_descriptor(const json& doc, const fs::path& base_dir = {}) {
  auto field = [&](const char* key) -> const json& {
    if (!doc.is_object() || !doc.contains(key)) {
      throw ValidationError(std::string("dataset descriptor: missing key '") + key + "'");
    }
    return doc.at(key);
  };
  auto int_map = [](const json& obj, const char* key) {
    std::map<int, std::string> out;
    if (!obj.is_object()) {
      throw ValidationError(std::string("dataset descriptor: '") + key + "' must be an object");
    }
    for (const auto& [k, value] : obj.items()) {
      int id = 0;
      try {
        std::size_t used = 0;
        id = std::stoi(k, &used);
        if (used != k.size()) throw std::invalid_argument(k);
      } catch (const std::exception&) {
        throw ValidationError(std::string("dataset descriptor: '") + key +
                              "' has non-integer key '" + k + "'");
      }
      if (!value.is_string()) {
        throw ValidationError(std::string("dataset descriptor: '") + key + "' values must be strings");
      }
      out[id] = value.get<std::string>();
    }
    return out;
  };

  DatasetDescriptor d;
  const json& name = field("name");
  if (!name.is_string()) throw ValidationError("dataset descriptor: 'name' must be a string");
  d.name = name.get<std::string>();
  for (auto& [id, text] : int_map(field("modality"), "modality")) d.modality[id] = lowercase(text);
  d.labels = int_map(field("labels"), "labels");
  if (!d.labels.count(0)) throw ValidationError("dataset descriptor: 'labels' must define class 0 (background)");
  const json& num = field("numTraining");
  if (!num.is_number_integer()) throw ValidationError("dataset descriptor: 'numTraining' must be an integer");
  const json& training = field("training");
  if (!training.is_array()) throw ValidationError("dataset descriptor: 'training' must be a list");
  if (training.empty()) throw ValidationError("dataset descriptor: empty training set");
  for (const auto& entry : training) {
    if (!entry.is_object() || !entry.contains("image") || !entry.contains("label")) {
      throw ValidationError("dataset descriptor: 'training' entries need 'image' and 'label'");
    }
    TrainingCase c;
    c.image = base_dir / fs::path(entry.at("image").get<std::string>()).lexically_normal();
    c.label = base_dir / fs::path(entry.at("label").get<std::string>()).lexically_normal();
    c.id = case_id_from_path(c.image);
    d.training_cases.push_back(std::move(c));
  }
  if (num.get<long long>() != static_cast<long long>(d.training_cases.size())) {
    throw ValidationError("dataset descriptor: 'numTraining' (" + std::to_string(num.get<long long>()) +
                          ") does not match length of 'training' (" +
                          std::to_string(d.training_cases.size()) + ")");
  }
  d.num_training = d.training_cases.size();
  return d;
}

inline DatasetDescriptor read_descriptor(const fs::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ValidationError("dataset descriptor: malformed JSON: " + std::string(e.what()));
  }
  return parse_descriptor(doc, path.parent_path());
}

inline json descriptor_to_json(const DatasetDescriptor& d, const fs::path& base_dir = {}) {
  json doc;
  doc["name"] = d.name;
  json modality = json::object();
  for (const auto& [id, text] : d.modality) modality[std::to_string(id)] = text;
  doc["modality"] = modality;
  json labels = json::object();
  for (const auto& [id, text] : d.labels) labels[std::to_string(id)] = text;
  doc["labels"] = labels;
  doc["numTraining"] = d.training_cases.size();
  json training = json::array();
  for (const auto& c : d.training_cases) {
    auto rel = [&](const fs::path& p) {
      return base_dir.empty() ? p.generic_string() : "./" + p.lexically_relative(base_dir).generic_string();
    };
    training.push_back({{"image", rel(c.image)}, {"label", rel(c.label)}});
  }
  doc["training"] = training;
  return doc;
}

}  // namespace segplan
