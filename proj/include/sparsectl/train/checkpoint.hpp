#pragma once

// Checkpoint container:
//   line 1  "SPARSECTL-CHECKPOINT"
//   line 2  header JSON: format_version, family, fingerprint, config, metadata,
//           blobs [{name, rows, cols}] in file order
//   then per blob: u32 name length, name bytes, u32 rows, u32 cols,
//           u64 payload bytes, rows*cols float32 values (all little-endian)

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>

#include "json.hpp"

#include "sparsectl/model/prosody_model.hpp"
#include "sparsectl/util/files.hpp"

namespace sparsectl::train {

inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr const char* kCheckpointMagic = "SPARSECTL-CHECKPOINT";

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class Real>
struct LoadedModel {
  model::ProsodyModel<Real> model;
  nlohmann::json metadata;
};

namespace detail {

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t pos) : bytes_(bytes), pos_(pos) {}

  bool read(void* dst, std::size_t n) {
    if (pos_ + n > bytes_.size()) return false;
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
    return true;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_;
};

}  // namespace detail

template <class Real>
std::string serialize_checkpoint(const model::ProsodyModel<Real>& m, const nlohmann::json& metadata) {
  nlohmann::ordered_json blobs = nlohmann::ordered_json::array();
  const auto& store = m.params();
  for (std::size_t i = 0; i < store.size(); ++i) {
    blobs.push_back({{"name", store[i].name}, {"rows", store[i].value.rows()}, {"cols", store[i].value.cols()}});
  }
  nlohmann::ordered_json header{{"format_version", kCheckpointFormatVersion},
                                {"family", model::family_name(m.family())},
                                {"fingerprint", m.fingerprint()},
                                {"config", model::to_json(m.config())},
                                {"metadata", metadata},
                                {"blobs", std::move(blobs)}};
  std::string out = std::string(kCheckpointMagic) + "\n" + header.dump() + "\n";
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& p = store[i];
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rows()));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.cols()));
    detail::put<std::uint64_t>(out, static_cast<std::uint64_t>(p.value.size()) * sizeof(float));
    for (diff::Index k = 0; k < p.value.size(); ++k) detail::put<float>(out, static_cast<float>(p.value.data()[k]));
  }
  return out;
}

template <class Real>
void save_checkpoint(const std::filesystem::path& path, const model::ProsodyModel<Real>& m,
                     const nlohmann::json& metadata = nlohmann::json::object()) {
  util::atomic_write(path, serialize_checkpoint(m, metadata));
}

struct CheckpointHeader {
  model::Family family = model::Family::micvae;
  std::string fingerprint;
  model::ModelConfig config;
  nlohmann::json metadata;
  nlohmann::json blobs;
  std::size_t payload_offset = 0;
};

inline CheckpointHeader parse_checkpoint_header(const std::string& bytes) {
  const auto nl1 = bytes.find('\n');
  if (nl1 == std::string::npos || bytes.compare(0, nl1, kCheckpointMagic) != 0) {
    throw FormatError("not a checkpoint file (bad magic)");
  }
  const auto nl2 = bytes.find('\n', nl1 + 1);
  if (nl2 == std::string::npos) throw FormatError("checkpoint header truncated");
  CheckpointHeader h;
  try {
    const auto j = nlohmann::json::parse(bytes.substr(nl1 + 1, nl2 - nl1 - 1));
    const int v = j.at("format_version").get<int>();
    if (v != kCheckpointFormatVersion) {
      throw FormatError("checkpoint format_version " + std::to_string(v) + " unsupported (expected " +
                        std::to_string(kCheckpointFormatVersion) + ")");
    }
    h.family = model::parse_family(j.at("family").get<std::string>());
    h.fingerprint = j.at("fingerprint").get<std::string>();
    h.config = model::model_config_from_json(j.at("config"));
    h.metadata = j.value("metadata", nlohmann::json::object());
    h.blobs = j.at("blobs");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header malformed: ") + e.what());
  } catch (const InvalidInput& e) {
    throw FormatError(std::string("checkpoint header malformed: ") + e.what());
  }
  h.payload_offset = nl2 + 1;
  return h;
}

// `expected`, when given, must match the stored family and fingerprint.
template <class Real>
LoadedModel<Real> load_checkpoint(const std::filesystem::path& path,
                                  const std::optional<model::Family>& expected_family = std::nullopt,
                                  const std::string& expected_fingerprint = {}) {
  const auto bytes = util::read_file(path);
  auto h = parse_checkpoint_header(bytes);
  if (expected_family && *expected_family != h.family) {
    throw FingerprintMismatch("checkpoint family '" + std::string(model::family_name(h.family)) +
                              "' (fingerprint " + h.fingerprint + ") does not match expected family '" +
                              std::string(model::family_name(*expected_family)) + "' (fingerprint " +
                              model::config_fingerprint(*expected_family, h.config) + ")");
  }
  if (!expected_fingerprint.empty() && expected_fingerprint != h.fingerprint) {
    throw FingerprintMismatch("checkpoint fingerprint " + h.fingerprint + " does not match expected " +
                              expected_fingerprint);
  }
  model::ProsodyModel<Real> m(h.family, h.config, 0);
  if (m.fingerprint() != h.fingerprint) {
    throw FingerprintMismatch("checkpoint fingerprint " + h.fingerprint +
                              " does not match its own config (recomputed " + m.fingerprint() + ")");
  }
  auto& store = m.params();
  if (h.blobs.size() != store.size()) {
    throw FormatError("checkpoint lists " + std::to_string(h.blobs.size()) + " blobs, model has " +
                      std::to_string(store.size()));
  }
  detail::Reader rd(bytes, h.payload_offset);
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store[i];
    const auto expected_name = h.blobs[i].at("name").get<std::string>();
    if (expected_name != p.name) {
      throw FormatError("checkpoint blob " + std::to_string(i) + " is '" + expected_name + "', model expects '" +
                        p.name + "'", i);
    }
    auto missing = [&]() { return FormatError("checkpoint truncated: blob '" + p.name + "' missing or incomplete", i); };
    std::uint32_t name_len = 0, rows = 0, cols = 0;
    std::uint64_t payload = 0;
    if (!rd.read(&name_len, sizeof name_len)) throw missing();
    std::string name(name_len, '\0');
    if (!rd.read(name.data(), name_len)) throw missing();
    if (name != p.name) throw FormatError("checkpoint blob name '" + name + "' where '" + p.name + "' expected", i);
    if (!rd.read(&rows, sizeof rows) || !rd.read(&cols, sizeof cols) || !rd.read(&payload, sizeof payload)) {
      throw missing();
    }
    if (rows != p.value.rows() || cols != p.value.cols()) {
      throw FormatError("checkpoint blob '" + p.name + "' has shape " + diff::shape_str(rows, cols) +
                        ", model expects " + diff::shape_str(p.value.rows(), p.value.cols()), i);
    }
    if (payload != static_cast<std::uint64_t>(rows) * cols * sizeof(float)) {
      throw FormatError("checkpoint blob '" + p.name + "' length " + std::to_string(payload) +
                        " inconsistent with its shape", i);
    }
    for (diff::Index k = 0; k < p.value.size(); ++k) {
      float v = 0.0f;
      if (!rd.read(&v, sizeof v)) throw missing();
      p.value.data()[k] = static_cast<Real>(v);
    }
  }
  if (!rd.at_end()) throw FormatError("checkpoint has trailing bytes after the last blob");
  return {std::move(m), std::move(h.metadata)};
}

}  // namespace sparsectl::train
