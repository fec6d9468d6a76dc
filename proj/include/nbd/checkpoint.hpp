#pragma once

// NBMC1 model checkpoints: hyperparameter text record followed by named
// float32 tensors.

#include <filesystem>
#include <optional>

#include "nbd/binio.hpp"
#include "nbd/model.hpp"

namespace nbd {

inline constexpr std::string_view kCheckpointMagic = "NBMC1";

inline std::string encode_checkpoint(const Model& model, const std::optional<io::Provenance>& prov = std::nullopt) {
  io::Writer w;
  w.bytes(kCheckpointMagic);
  w.text(model.config().to_json().dump());
  const auto& ps = model.params();
  w.put(static_cast<std::uint32_t>(ps.size()));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& v = ps.at(i).value;
    w.text(ps.name(i));
    w.put(std::uint32_t{2});
    w.put(static_cast<std::uint32_t>(v.rows()));
    w.put(static_cast<std::uint32_t>(v.cols()));
    for (Eigen::Index k = 0; k < v.size(); ++k) w.put(static_cast<float>(v.data()[k]));
  }
  io::write_provenance(w, prov);
  return w.take();
}

struct LoadedCheckpoint {
  Model model;
  std::optional<io::Provenance> provenance;
};

inline LoadedCheckpoint decode_checkpoint(std::string_view data) {
  io::Reader r(data);
  r.expect_magic(kCheckpointMagic);
  nlohmann::json hp;
  try {
    hp = nlohmann::json::parse(r.text());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::FormatError, std::string("bad hyperparameter record: ") + e.what());
  }
  LoadedCheckpoint out{Model(ModelConfig::from_json(hp)), std::nullopt};
  auto& ps = out.model.params();
  const auto count = r.get<std::uint32_t>();
  require(count == ps.size(), ErrorCode::FormatError, "tensor count does not match the architecture");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.text();
    auto& p = ps.get(name);
    const auto rank = r.get<std::uint32_t>();
    require(rank == 2, ErrorCode::FormatError, "tensor " + name + " must have rank 2");
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    require(rows == p.value.rows() && cols == p.value.cols(), ErrorCode::FormatError, "tensor " + name + " has wrong shape");
    for (Eigen::Index k = 0; k < p.value.size(); ++k) p.value.data()[k] = r.get<float>();
  }
  out.provenance = io::read_provenance(r);
  return out;
}

inline void save_checkpoint(const std::filesystem::path& path, const Model& model,
                            const std::optional<io::Provenance>& prov = std::nullopt) {
  io::write_file(path, encode_checkpoint(model, prov));
}

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path));
}

}  // namespace nbd
