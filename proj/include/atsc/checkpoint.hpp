#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "atsc/model.hpp"

// Checkpoint directory layout:
//   manifest.json   format/version, run metadata, one entry per part (kind, shape, file, fingerprint)
//   <part>.bin      "ATSCBLOB", u64 trainable count, u64 buffer count, then float64 values
//                   (trainable parameters in declared order, then BN running mean/var per layer)

namespace atsc {

using nlohmann::json;

inline constexpr const char* kCheckpointFormat = "atsc-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline std::string json_str(const json& j) { return j.get<std::string>(); }
inline std::size_t json_size(const json& j) { return j.get<std::size_t>(); }

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

/// Rejects keys outside `allowed`, naming the offending key with its `context` path.
inline void require_known_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& context) {
  if (!j.is_object()) throw ConfigError(context + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(context + ": unknown key '" + key + "'");
  }
}

inline json encoder_spec_to_json(const EncoderSpec& s) {
  json j{{"type", s.kind == EncoderSpec::Kind::mlp ? "mlp" : "cnn"},
         {"input", {s.in_h, s.in_w, s.in_ch}},
         {"widths", s.widths}};
  if (!s.pool.empty()) j["pool"] = s.pool;
  return j;
}

inline EncoderSpec encoder_spec_from_json(const json& j, const std::string& context) {
  require_known_keys(j, {"type", "input", "widths", "pool"}, context);
  EncoderSpec s;
  try {
    const auto type = j.at("type").get<std::string>();
    if (type == "mlp")
      s.kind = EncoderSpec::Kind::mlp;
    else if (type == "cnn")
      s.kind = EncoderSpec::Kind::cnn;
    else
      throw ConfigError(context + ".type: expected 'mlp' or 'cnn', got '" + type + "'");
    if (j.contains("input")) {
      const auto in = j.at("input").get<std::vector<std::size_t>>();
      if (in.size() != 3) throw ConfigError(context + ".input: expected [H, W, C]");
      s.in_h = in[0];
      s.in_w = in[1];
      s.in_ch = in[2];
    }
    s.widths = j.at("widths").get<std::vector<std::size_t>>();
    if (j.contains("pool")) s.pool = j.at("pool").get<std::vector<bool>>();
  } catch (const json::exception& e) {
    throw ConfigError(context + ": " + e.what());
  }
  try {
    s.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(context + ": " + e.what());
  }
  return s;
}

namespace detail {

template <class Net>
std::vector<double> buffer_values(const Net& net) {
  std::vector<double> out;
  net.for_each_batchnorm([&](const auto& bn) {
    out.insert(out.end(), bn.running_mean.begin(), bn.running_mean.end());
    out.insert(out.end(), bn.running_var.begin(), bn.running_var.end());
  });
  return out;
}

template <class S, class Net>
void set_buffer_values(Net& net, const std::vector<double>& v) {
  std::size_t off = 0;
  net.for_each_batchnorm([&](auto& bn) {
    for (auto& x : bn.running_mean) x = static_cast<S>(v.at(off++));
    for (auto& x : bn.running_var) x = static_cast<S>(v.at(off++));
  });
  if (off != v.size()) throw IngestionError("checkpoint blob holds extra buffer values");
}

inline void write_blob(const std::filesystem::path& file, const std::vector<double>& params,
                       const std::vector<double>& buffers) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error("cannot write " + file.string());
  out.write("ATSCBLOB", 8);
  const std::uint64_t np = params.size(), nb = buffers.size();
  out.write(reinterpret_cast<const char*>(&np), sizeof np);
  out.write(reinterpret_cast<const char*>(&nb), sizeof nb);
  out.write(reinterpret_cast<const char*>(params.data()), static_cast<std::streamsize>(np * sizeof(double)));
  out.write(reinterpret_cast<const char*>(buffers.data()), static_cast<std::streamsize>(nb * sizeof(double)));
  if (!out) throw Error("failed writing " + file.string());
}

inline std::pair<std::vector<double>, std::vector<double>> read_blob(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IngestionError("cannot open checkpoint blob " + file.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "ATSCBLOB", 8) != 0) throw IngestionError(file.string() + ": not a checkpoint blob");
  std::uint64_t np = 0, nb = 0;
  in.read(reinterpret_cast<char*>(&np), sizeof np);
  in.read(reinterpret_cast<char*>(&nb), sizeof nb);
  std::vector<double> p(np), b(nb);
  in.read(reinterpret_cast<char*>(p.data()), static_cast<std::streamsize>(np * sizeof(double)));
  in.read(reinterpret_cast<char*>(b.data()), static_cast<std::streamsize>(nb * sizeof(double)));
  if (!in) throw IngestionError(file.string() + ": truncated blob");
  return {std::move(p), std::move(b)};
}

inline std::uint64_t fingerprint_of(const std::vector<double>& v) { return fnv1a(v.data(), v.size() * sizeof(double)); }

}  // namespace detail

/// Collects model parts and run metadata, then writes them as one checkpoint directory.
template <class S>
class CheckpointWriter {
 public:
  json& meta() { return meta_; }

  void add(const std::string& name, const Encoder<S>& e) {
    json entry{{"name", name}, {"kind", "encoder"}, {"role", to_string(e.role())}, {"spec", encoder_spec_to_json(e.spec())}};
    stage(std::move(entry), flatten_params<double>(e), detail::buffer_values(e.net()));
  }
  void add(const std::string& name, const Projector<S>& p) {
    json entry{{"name", name}, {"kind", "projector"}, {"ch_in", p.ch_in()}, {"ch_out", p.ch_out()}, {"r", p.reduction()}};
    stage(std::move(entry), flatten_params<double>(p), detail::buffer_values(p.net()));
  }
  void add(const std::string& name, const SharedClassifier<S>& c) {
    json entry{{"name", name}, {"kind", "classifier"}, {"ch_in", c.ch_in()}, {"num_classes", c.num_classes()}};
    stage(std::move(entry), flatten_params<double>(c), {});
  }

  /// Writes to a sibling temp directory and swaps it in, so an existing checkpoint at `dir`
  /// survives any failure part-way through.
  void save(const std::filesystem::path& dir) const {
    namespace fs = std::filesystem;
    const fs::path tmp = dir.string() + ".tmp", old = dir.string() + ".old";
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    json manifest = meta_;
    manifest["format"] = kCheckpointFormat;
    manifest["version"] = kCheckpointVersion;
    manifest["parts"] = json::array();
    for (const auto& p : staged_) {
      detail::write_blob(tmp / (json_str(p.entry.at("name")) + ".bin"), p.params, p.buffers);
      manifest["parts"].push_back(p.entry);
    }
    {
      std::ofstream out(tmp / "manifest.json");
      out << manifest.dump(2) << '\n';
      if (!out) throw Error("cannot write manifest in " + tmp.string());
    }
    fs::remove_all(old);
    if (fs::exists(dir)) fs::rename(dir, old);
    fs::rename(tmp, dir);
    fs::remove_all(old);
  }

 private:
  struct Staged {
    json entry;
    std::vector<double> params;
    std::vector<double> buffers;
  };

  void stage(json entry, std::vector<double> params, std::vector<double> buffers) {
    entry["file"] = json_str(entry.at("name")) + ".bin";
    entry["param_count"] = params.size();
    entry["fingerprint"] = hex64(detail::fingerprint_of(params));
    staged_.push_back({std::move(entry), std::move(params), std::move(buffers)});
  }

  json meta_ = json::object();
  std::vector<Staged> staged_;
};

/// A checkpoint directory opened for reading; parts are rebuilt on request and integrity-checked.
template <class S>
class Checkpoint {
 public:
  explicit Checkpoint(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::ifstream in(dir_ / "manifest.json");
    if (!in) throw StartupError("checkpoint manifest not found: " + (dir_ / "manifest.json").string());
    try {
      manifest_ = json::parse(in);
    } catch (const json::exception& e) {
      throw IngestionError((dir_ / "manifest.json").string() + ": " + e.what());
    }
    if (manifest_.value("format", "") != kCheckpointFormat)
      throw IngestionError(dir_.string() + ": not an atsc checkpoint");
  }

  const json& manifest() const noexcept { return manifest_; }
  const std::filesystem::path& dir() const noexcept { return dir_; }

  bool has(const std::string& name) const { return find(name) != nullptr; }

  Encoder<S> encoder(const std::string& name) const {
    const auto& e = part(name, "encoder");
    Encoder<S> enc(encoder_spec_from_json(e.at("spec"), name + ".spec"),
                   json_str(e.at("role")) == "teacher" ? Role::teacher : Role::student);
    load_into(e, enc, enc.net());
    return enc;
  }

  Projector<S> projector(const std::string& name) const {
    const auto& e = part(name, "projector");
    Projector<S> p(json_size(e.at("ch_in")), json_size(e.at("ch_out")), json_size(e.at("r")));
    load_into(e, p, p.net());
    return p;
  }

  SharedClassifier<S> classifier(const std::string& name) const {
    const auto& e = part(name, "classifier");
    SharedClassifier<S> c(json_size(e.at("ch_in")), json_size(e.at("num_classes")));
    layers::Sequential<S> none;
    load_into(e, c, none);
    return c;
  }

 private:
  const json* find(const std::string& name) const {
    if (!manifest_.contains("parts")) return nullptr;
    for (const auto& p : manifest_.at("parts"))
      if (p.value("name", "") == name) return &p;
    return nullptr;
  }

  const json& part(const std::string& name, const std::string& kind) const {
    const auto* p = find(name);
    if (!p) throw StartupError(dir_.string() + ": checkpoint has no part '" + name + "'");
    if (p->value("kind", "") != kind)
      throw IngestionError(dir_.string() + ": part '" + name + "' is not a " + kind);
    return *p;
  }

  template <class Model, class Net>
  void load_into(const json& entry, Model& m, Net& net) const {
    auto [params, buffers] = detail::read_blob(dir_ / json_str(entry.at("file")));
    if (hex64(detail::fingerprint_of(params)) != json_str(entry.at("fingerprint")))
      throw IngestionError(dir_.string() + ": fingerprint mismatch for part '" + json_str(entry.at("name")) + "'");
    std::vector<S> cast(params.begin(), params.end());
    unflatten_params(m, cast);
    detail::set_buffer_values<S>(net, buffers);
  }

  std::filesystem::path dir_;
  json manifest_;
};

}  // namespace atsc
