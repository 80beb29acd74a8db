#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "microseg/metrics.hpp"
#include "microseg/model.hpp"
#include "microseg/synth.hpp"
#include "microseg/train.hpp"
#include "microseg/velocity.hpp"

namespace microseg {

using json = nlohmann::ordered_json;

/// Malformed dataset, config, checkpoint or report input.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kDatasetFormatVersion = 1;
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;
inline constexpr int kReportFormatVersion = 1;
inline constexpr std::array<std::string_view, kNumChannels> kChannelNames = {"ax", "ay", "az",
                                                                             "gx", "gy", "gz"};

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

inline json read_json_file(const std::filesystem::path& path) {
  try {
    return json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

// ------------------------------------------------------------ conversions

inline json to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},       {"n_heads", c.n_heads},
          {"n_layers", c.n_layers},     {"dropout", c.dropout},
          {"window_len", c.window_len}, {"n_channels", c.n_channels},
          {"n_classes", c.n_classes},   {"ffn_dim", c.ffn_dim},
          {"tcn_layers", c.tcn_layers}, {"tcn_channels", c.tcn_channels},
          {"kernel_size", c.kernel_size}};
}

inline json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon},
          {"seed", c.seed},
          {"mask_ratio", c.mask_ratio},
          {"patch_len", c.patch_len},
          {"eta", c.eta},
          {"patience", c.patience},
          {"validation_fraction", c.validation_fraction},
          {"class_weights", c.class_weights}};
}

namespace detail {

/// Copies recognised keys of `j` into `out`, collecting unknown keys and
/// type mismatches into `errors` instead of stopping at the first one.
class FieldReader {
 public:
  FieldReader(const json& j, std::string where, std::vector<std::string>& errors)
      : j_(j), where_(std::move(where)), errors_(errors) {
    if (!j_.is_object()) errors_.push_back(where_ + ": expected an object");
  }

  template <class T>
  FieldReader& read(const char* key, T& out) {
    known_.emplace_back(key);
    if (!j_.is_object() || !j_.contains(key)) return *this;
    const auto& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (!v.is_number_unsigned()) throw std::invalid_argument("expected a non-negative integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw std::invalid_argument("expected a number");
      }
      out = v.template get<T>();
    } catch (const std::exception& e) {
      errors_.push_back(where_ + "." + key + ": " + e.what());
    }
    return *this;
  }

  void finish() {
    if (!j_.is_object()) return;
    for (const auto& [k, _] : j_.items())
      if (std::find(known_.begin(), known_.end(), k) == known_.end())
        errors_.push_back(where_ + ": unknown key '" + k + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::vector<std::string>& errors_;
  std::vector<std::string> known_;
};

}  // namespace detail

inline ModelConfig model_config_from_json(const json& j, std::vector<std::string>& errors,
                                          ModelConfig base = {}) {
  detail::FieldReader r(j, "model", errors);
  r.read("d_model", base.d_model)
      .read("n_heads", base.n_heads)
      .read("n_layers", base.n_layers)
      .read("dropout", base.dropout)
      .read("window_len", base.window_len)
      .read("n_channels", base.n_channels)
      .read("n_classes", base.n_classes)
      .read("ffn_dim", base.ffn_dim)
      .read("tcn_layers", base.tcn_layers)
      .read("tcn_channels", base.tcn_channels)
      .read("kernel_size", base.kernel_size)
      .finish();
  return base;
}

inline TrainConfig train_config_from_json(const json& j, std::vector<std::string>& errors,
                                          TrainConfig base = {}) {
  detail::FieldReader r(j, "train", errors);
  r.read("batch_size", base.batch_size)
      .read("epochs", base.epochs)
      .read("learning_rate", base.learning_rate)
      .read("beta1", base.beta1)
      .read("beta2", base.beta2)
      .read("epsilon", base.epsilon)
      .read("seed", base.seed)
      .read("mask_ratio", base.mask_ratio)
      .read("patch_len", base.patch_len)
      .read("eta", base.eta)
      .read("patience", base.patience)
      .read("validation_fraction", base.validation_fraction)
      .read("class_weights", base.class_weights)
      .finish();
  return base;
}

struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  std::vector<std::string> violations() const {
    std::vector<std::string> out;
    for (const auto& v : model.violations()) out.push_back("model: " + v);
    for (const auto& v : train.violations()) out.push_back("train: " + v);
    if (train.patch_len && model.window_len % train.patch_len != 0)
      out.push_back("window_len " + std::to_string(model.window_len) +
                    " is not a multiple of patch_len " + std::to_string(train.patch_len));
    if (!train.class_weights.empty() && train.class_weights.size() != model.n_classes)
      out.push_back("train: class_weights needs one entry per class");
    return out;
  }
};

inline json to_json(const RunConfig& c) {
  return {{"model", to_json(c.model)}, {"train", to_json(c.train)}};
}

/// Parses {"model": {...}, "train": {...}} over `base`; every problem is
/// reported in one DataError.
inline RunConfig run_config_from_json(const json& j, RunConfig base = {}) {
  std::vector<std::string> errors;
  if (!j.is_object()) {
    errors.emplace_back("config: expected an object");
  } else {
    for (const auto& [k, _] : j.items())
      if (k != "model" && k != "train") errors.push_back("config: unknown key '" + k + "'");
    if (j.contains("model")) base.model = model_config_from_json(j.at("model"), errors, base.model);
    if (j.contains("train")) base.train = train_config_from_json(j.at("train"), errors, base.train);
  }
  if (errors.empty()) errors = base.violations();
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw DataError(msg);
  }
  return base;
}

inline json to_json(const SubjectProfile& p) {
  return {{"subject_id", p.subject_id},   {"amplitude_scale", p.amplitude_scale},
          {"tempo_scale", p.tempo_scale}, {"gap_min_s", p.gap_min_s},
          {"gap_max_s", p.gap_max_s},     {"gravity", p.gravity},
          {"noise_sigma", p.noise_sigma}};
}

inline json to_json(const ClassF1Report& r) {
  json classes = json::array();
  for (const auto& c : r.classes) {
    classes.push_back({{"class_id", c.class_id},
                       {"name", activity_name(c.class_id)},
                       {"present", c.present},
                       {"tp", c.tp},
                       {"fp", c.fp},
                       {"fn", c.fn},
                       {"precision", c.precision},
                       {"recall", c.recall},
                       {"f1", c.f1}});
  }
  return {{"macro_f1", r.macro_f1}, {"classes", classes}};
}

inline json to_json(const ConfusionMatrix& m) {
  return {{"n_classes", m.n_classes}, {"counts", m.counts}, {"normalized", m.normalized}};
}

inline json to_json(const LoaReport& r) {
  json classes = json::array();
  for (const auto& c : r.classes) {
    classes.push_back({{"class_id", c.class_id},
                       {"name", activity_name(c.class_id)},
                       {"mean", c.mean},
                       {"std", c.std},
                       {"lower", c.lower},
                       {"upper", c.upper}});
  }
  return {{"classes", classes}};
}

inline json to_json(const EpochRecord& e) {
  json j = {{"epoch", e.epoch}, {"loss", e.loss}, {"ce", e.ce}, {"mse", e.mse}};
  j["validation_ce"] = e.validation_ce ? json(*e.validation_ce) : json(nullptr);
  return j;
}

inline json to_json(const RepetitionKinematics& k) {
  return {{"class_id", k.class_id},
          {"name", activity_name(k.class_id)},
          {"start", k.start},
          {"end", k.end},
          {"duration_s", k.duration_s},
          {"max_abs_velocity", k.max_abs_velocity},
          {"peak_index", k.peak_index}};
}

// ----------------------------------------------------------------- dataset

struct DatasetSubject {
  std::string id;
  std::string file;
  std::size_t rows = 0;
};

struct Dataset {
  std::vector<Recording> recordings;
  json manifest;

  const Recording& subject(const std::string& id) const {
    for (const auto& r : recordings)
      if (r.subject_id == id) return r;
    throw DataError("subject '" + id + "' not in dataset");
  }
  std::vector<std::string> subject_ids() const {
    std::vector<std::string> out;
    for (const auto& r : recordings) out.push_back(r.subject_id);
    return out;
  }
};

inline std::map<std::string, std::size_t> segment_counts(const Recording& rec) {
  std::map<std::string, std::size_t> out;
  for (std::size_t c = 1; c < kNumActivities; ++c) out[activity_name(static_cast<int>(c))] = 0;
  for (const auto& s : rec.segments) ++out[activity_name(s.class_id)];
  return out;
}

inline std::string recording_csv(const Recording& rec) {
  std::string out = "t_index";
  for (auto name : kChannelNames) (out += ',') += name;
  out += ",label\n";
  for (std::size_t t = 0; t < rec.length(); ++t) {
    out += std::to_string(t);
    for (std::size_t c = 0; c < kNumChannels; ++c) (out += ',') += format_double(rec.signal.at(t, c));
    (out += ',') += std::to_string(rec.labels[t]);
    out += '\n';
  }
  return out;
}

/// Writes one CSV per subject plus manifest.json into `dir`.
inline json write_dataset(const std::filesystem::path& dir,
                          const std::vector<std::pair<SubjectProfile, Recording>>& cohort,
                          std::uint64_t seed, const SessionPlan& plan) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  json classes = json::object();
  for (std::size_t c = 0; c < kNumActivities; ++c)
    classes[std::to_string(c)] = activity_name(static_cast<int>(c));
  json subjects = json::array(), profiles = json::array();
  for (const auto& [profile, rec] : cohort) {
    const std::string file = rec.subject_id + ".csv";
    write_text_file(dir / file, recording_csv(rec));
    subjects.push_back({{"id", rec.subject_id},
                        {"file", file},
                        {"rows", rec.length()},
                        {"segment_counts", segment_counts(rec)}});
    profiles.push_back(to_json(profile));
  }
  json manifest = {{"format_version", kDatasetFormatVersion},
                   {"sample_rate", kSampleRate},
                   {"channels", kChannelNames},
                   {"classes", classes},
                   {"subjects", subjects},
                   {"generator", {{"seed", seed}, {"plan", format_plan(plan)}, {"profiles", profiles}}}};
  write_json_file(dir / "manifest.json", manifest);
  return manifest;
}

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t from = 0;
  while (true) {
    const auto comma = line.find(',', from);
    out.push_back(line.substr(from, comma - from));
    if (comma == std::string_view::npos) break;
    from = comma + 1;
  }
  return out;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  return r.ec == std::errc() && r.ptr == s.data() + s.size();
}

}  // namespace detail

inline Recording parse_recording_csv(const std::string& text, const std::string& subject_id,
                                     const std::string& where) {
  Recording rec;
  rec.subject_id = subject_id;
  std::vector<double> values;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  const std::string header = "t_index,ax,ay,az,gx,gy,gz,label";
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto at = [&] { return where + ":" + std::to_string(line_no) + ": "; };
    if (line_no == 1) {
      if (line != header) throw DataError(at() + "expected header '" + header + "'");
      continue;
    }
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 8) throw DataError(at() + "expected 8 columns, got " + std::to_string(cells.size()));
    std::size_t t = 0;
    if (!detail::parse_number(cells[0], t) || t != rec.labels.size())
      throw DataError(at() + "t_index must count up from 0");
    for (std::size_t c = 0; c < kNumChannels; ++c) {
      double v = 0.0;
      if (!detail::parse_number(cells[1 + c], v) || !std::isfinite(v))
        throw DataError(at() + "bad value '" + std::string(cells[1 + c]) + "' in " +
                        std::string(kChannelNames[c]));
      values.push_back(v);
    }
    int label = 0;
    if (!detail::parse_number(cells[7], label) || label < 0 ||
        static_cast<std::size_t>(label) >= kNumActivities)
      throw DataError(at() + "label '" + std::string(cells[7]) + "' outside [0, " +
                      std::to_string(kNumActivities) + ")");
    rec.labels.push_back(label);
  }
  if (line_no == 0) throw DataError(where + ": empty file");
  rec.signal = Tensor({rec.labels.size(), kNumChannels}, std::move(values));
  rec.segments = labels_to_segments(rec.labels);
  return rec;
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.manifest = read_json_file(dir / "manifest.json");
  const auto& m = ds.manifest;
  try {
    if (m.at("format_version").get<int>() != kDatasetFormatVersion)
      throw DataError("unsupported dataset format_version " + m.at("format_version").dump());
    for (const auto& s : m.at("subjects")) {
      const auto id = s.at("id").get<std::string>();
      const auto file = s.at("file").get<std::string>();
      auto rec = parse_recording_csv(read_text_file(dir / file), id, file);
      const auto rows = s.at("rows").get<std::size_t>();
      if (rec.length() != rows)
        throw DataError(file + ": manifest lists " + std::to_string(rows) + " rows, file has " +
                        std::to_string(rec.length()));
      ds.recordings.push_back(std::move(rec));
    }
  } catch (const json::exception& e) {
    throw DataError((dir / "manifest.json").string() + ": " + e.what());
  }
  if (ds.recordings.empty()) throw DataError("dataset lists no subjects");
  return ds;
}

// -------------------------------------------------------------- checkpoint

namespace detail {

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}
  std::uint64_t u64() { return le(8); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError("checkpoint truncated");
  }
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

inline constexpr std::string_view kCheckpointMagic = "MSEGCKPT";

}  // namespace detail

/// Binary layout: magic, u32 version, u32 header length, JSON header,
/// u32 block count, blocks (name, shape, little-endian float64 data), then
/// the FNV-1a 64 hash of everything before it.
inline std::string encode_checkpoint(const Model& model, const json& meta = json::object()) {
  std::vector<std::pair<std::string, Tensor>> blocks;
  for (const auto& p : model.parameters()) blocks.emplace_back(p.name, p.tensor);
  const auto& norm = model.normalizer();
  if (!norm.empty()) {
    blocks.emplace_back("normalizer.mean", Tensor({norm.mean.size()}, norm.mean));
    blocks.emplace_back("normalizer.scale", Tensor({norm.scale.size()}, norm.scale));
  }
  const json header = {{"model", to_json(model.config())}, {"meta", meta}};
  const std::string header_text = header.dump();

  std::string out(detail::kCheckpointMagic);
  detail::put_u32(out, kCheckpointFormatVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(header_text.size()));
  out += header_text;
  detail::put_u32(out, static_cast<std::uint32_t>(blocks.size()));
  for (const auto& [name, t] : blocks) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) detail::put_u64(out, d);
    for (double v : t.data()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      detail::put_u64(out, bits);
    }
  }
  detail::put_u64(out, detail::fnv1a64(out));
  return out;
}

struct LoadedCheckpoint {
  Model model;
  json meta;
};

inline LoadedCheckpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < detail::kCheckpointMagic.size() + 8 ||
      bytes.substr(0, detail::kCheckpointMagic.size()) != detail::kCheckpointMagic)
    throw DataError("not a checkpoint file (bad magic)");
  const auto body = bytes.substr(0, bytes.size() - 8);
  detail::ByteReader tail(bytes.substr(bytes.size() - 8));
  if (tail.u64() != detail::fnv1a64(body)) throw DataError("checkpoint checksum mismatch");

  detail::ByteReader r(body);
  r.take(detail::kCheckpointMagic.size());
  const auto version = r.u32();
  if (version != kCheckpointFormatVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  json header;
  try {
    header = json::parse(r.take(r.u32()));
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint header: ") + e.what());
  }
  std::vector<std::string> errors;
  const auto config = model_config_from_json(header.value("model", json::object()), errors);
  for (const auto& v : config.violations()) errors.push_back(v);
  if (!errors.empty()) throw DataError("checkpoint config: " + errors.front());

  LoadedCheckpoint out{Model(config, 0), header.value("meta", json::object())};
  std::map<std::string, Tensor> params;
  for (const auto& p : out.model.parameters()) params.emplace(p.name, p.tensor);
  Normalizer norm;
  std::size_t restored = 0;
  const auto n_blocks = r.u32();
  for (std::uint32_t b = 0; b < n_blocks; ++b) {
    const std::string name(r.take(r.u32()));
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u64();
    std::vector<double> values(shape_size(shape));
    for (auto& v : values) {
      const std::uint64_t bits = r.u64();
      std::memcpy(&v, &bits, sizeof v);
    }
    if (name == "normalizer.mean") {
      norm.mean = std::move(values);
    } else if (name == "normalizer.scale") {
      norm.scale = std::move(values);
    } else {
      auto it = params.find(name);
      if (it == params.end()) throw DataError("checkpoint has unknown block '" + name + "'");
      if (it->second.shape() != shape)
        throw DataError("checkpoint block '" + name + "' has shape " + shape_str(shape) +
                        ", model expects " + shape_str(it->second.shape()));
      std::copy(values.begin(), values.end(), it->second.mutable_data().begin());
      ++restored;
    }
  }
  if (restored != params.size())
    throw DataError("checkpoint restores " + std::to_string(restored) + " of " +
                    std::to_string(params.size()) + " parameter blocks");
  if (norm.mean.size() != norm.scale.size()) throw DataError("checkpoint normalizer is incomplete");
  out.model.set_normalizer(std::move(norm));
  return out;
}

inline void save_checkpoint(const std::filesystem::path& path, const Model& model,
                            const json& meta = json::object()) {
  write_text_file(path, encode_checkpoint(model, meta));
}

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_text_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace microseg
