#pragma once

// Single-file checkpoint: "GPOCKPT1", u64 manifest length, JSON manifest
// (tensor name -> offset, shape, dtype; config; normalization stats), then
// the GPT1-encoded tensors back to back.

#include "gpo/config.hpp"
#include "gpo/tensor_io.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

namespace gpo {

struct Checkpoint {
  ExperimentConfig config;
  GPOModel<double> model;
  NormStats<double> in_stats;
  NormStats<double> out_stats;
};

namespace detail {

inline nlohmann::json stats_json(const NormStats<double>& s) {
  nlohmann::json j;
  j["mean"] = std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size());
  j["std"] = std::vector<double>(s.std.data(), s.std.data() + s.std.size());
  j["floored"] = s.floored;
  return j;
}

inline NormStats<double> stats_from_json(const nlohmann::json& j) {
  NormStats<double> s;
  const auto m = j.at("mean").get<std::vector<double>>();
  const auto d = j.at("std").get<std::vector<double>>();
  s.mean = Eigen::Map<const Vec<double>>(m.data(), static_cast<Index>(m.size()));
  s.std = Eigen::Map<const Vec<double>>(d.data(), static_cast<Index>(d.size()));
  s.floored = j.at("floored").get<std::vector<bool>>();
  return s;
}

inline std::map<std::string, Tensor> model_tensors(const GPOModel<double>& m) {
  std::map<std::string, Tensor> out;
  out.emplace("embedding.B", to_tensor(m.emb.B));
  m.visit_params([&](const std::string& name, const auto& t) { out.emplace(name, to_tensor(Mat<double>(t))); });
  return out;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const auto tensors = detail::model_tensors(ck.model);
  nlohmann::json manifest;
  manifest["format"] = "GPOCKPT1";
  manifest["config"] = to_json(ck.config);
  manifest["norm"] = {{"input", detail::stats_json(ck.in_stats)}, {"output", detail::stats_json(ck.out_stats)}};
  manifest["sigma_B"] = ck.model.emb.sigma_B;
  std::ostringstream blob(std::ios::binary);
  for (const auto& [name, t] : tensors) {
    manifest["tensors"][name] = {{"offset", static_cast<std::uint64_t>(blob.tellp())}, {"shape", t.shape}, {"dtype", "f64"}};
    write_tensor(blob, t);
  }
  const std::string mtext = manifest.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  os.write("GPOCKPT1", 8);
  const std::uint64_t len = mtext.size();
  for (int i = 0; i < 8; ++i) os.put(static_cast<char>((len >> (8 * i)) & 0xff));
  os.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
  const std::string b = blob.str();
  os.write(b.data(), static_cast<std::streamsize>(b.size()));
  if (!os) throw FormatError("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, "GPOCKPT1", 8) != 0) throw FormatError("checkpoint: bad magic in " + path);
  unsigned char lb[8];
  if (!is.read(reinterpret_cast<char*>(lb), 8)) throw FormatError("checkpoint: truncated header");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(lb[i]) << (8 * i);
  std::string mtext(len, '\0');
  if (!is.read(mtext.data(), static_cast<std::streamsize>(len))) throw FormatError("checkpoint: truncated manifest");
  const nlohmann::json manifest = nlohmann::json::parse(mtext);
  const std::streamoff base = is.tellg();

  Checkpoint ck;
  ck.config = from_json(manifest.at("config"), ExperimentConfig{});
  ck.model = make_model<double>(ck.config.model, 0);
  ck.in_stats = detail::stats_from_json(manifest.at("norm").at("input"));
  ck.out_stats = detail::stats_from_json(manifest.at("norm").at("output"));
  auto read_named = [&](const std::string& name) {
    const auto& e = manifest.at("tensors").at(name);
    is.seekg(base + static_cast<std::streamoff>(e.at("offset").get<std::uint64_t>()));
    return to_matrix<double>(read_tensor(is));
  };
  ck.model.emb.B = read_named("embedding.B");
  ck.model.emb.sigma_B = manifest.at("sigma_B").get<double>();
  ck.model.visit_params([&](const std::string& name, auto& t) {
    const Mat<double> m = read_named(name);
    if (m.rows() != t.rows() || m.cols() != t.cols()) throw FormatError("checkpoint: tensor " + name + " has the wrong shape");
    t = m;
  });
  return ck;
}

}  // namespace gpo
