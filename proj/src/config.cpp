#include "gpo/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace gpo {

using nlohmann::json;

void ExperimentConfig::validate() const {
  model.validate();
  const TrainConfig& t = training;
  auto fail = [](const std::string& m) { throw ConfigError("training." + m); };
  if (!(t.lr0 > 0)) fail("lr0: must be positive");
  if (t.step_period < 1) fail("step_period: must be >= 1");
  if (!(t.gamma > 0 && t.gamma <= 1)) fail("gamma: must lie in (0, 1]");
  if (!(t.adamw.weight_decay >= 0)) fail("weight_decay: must be >= 0");
  if (!(t.adamw.beta1 >= 0 && t.adamw.beta1 < 1)) fail("beta1: must lie in [0, 1)");
  if (!(t.adamw.beta2 >= 0 && t.adamw.beta2 < 1)) fail("beta2: must lie in [0, 1)");
  if (!(t.adamw.eps > 0)) fail("adam_eps: must be positive");
  if (t.batch < 1) fail("batch: must be >= 1");
  if (t.epochs < 0) fail("epochs: must be >= 0");
  if (t.patience < 0) fail("patience: must be >= 0");
  if (precision != "f64" && precision != "f32") fail("precision: must be \"f64\" or \"f32\"");
  data.synth.validate();
  if (data.n_traj < 1) throw ConfigError("data.n_traj: must be >= 1");
  if (data.horizon < 2) throw ConfigError("data.horizon: must be >= 2");
  if (!(data.mask_fraction >= 0 && data.mask_fraction < 1)) throw ConfigError("data.mask_fraction: must lie in [0, 1)");
  if (eval.rollout_T < 1) throw ConfigError("eval.rollout_T: must be >= 1");
  if (!(eval.k_lo > 0 && eval.k_lo < eval.k_hi)) throw ConfigError("eval.k_lo/k_hi: need 0 < k_lo < k_hi");
  if (eval.query_n < 2) throw ConfigError("eval.query_n: must be >= 2");
}

ExperimentConfig default_config() {
  ExperimentConfig c;
  apply_preset(c, "desk");
  return c;
}

std::vector<std::string> preset_names() {
  return {"tiny", "desk", "ns2d", "no-pg", "no-gaussian-field", "g1", "g16", "g64"};
}

void apply_preset(ExperimentConfig& cfg, const std::string& name) {
  ModelConfig& m = cfg.model;
  auto base = [&](Index hidden, Index layers, Index heads, Index G) {
    m = ModelConfig{};
    m.hidden_dim = hidden;
    m.num_layers = layers;
    m.num_heads = heads;
    m.num_gaussians = G;
  };
  if (name == "tiny") {
    base(16, 2, 2, 4);
    m.fourier_m = 4;
    cfg.data.synth.n = 4;
    cfg.training.batch = 2;
  } else if (name == "desk") {
    base(64, 4, 4, 16);
  } else if (name == "ns2d") {
    base(128, 8, 8, 32);
  } else if (name == "no-pg") {
    m.num_layers = 0;
  } else if (name == "no-gaussian-field") {
    m.encoder = EncoderKind::PlainMlp;
  } else if (name == "g1") {
    m.num_gaussians = 1;
  } else if (name == "g16") {
    m.num_gaussians = 16;
  } else if (name == "g64") {
    m.num_gaussians = 64;
  } else {
    std::string known;
    for (const auto& p : preset_names()) known += (known.empty() ? "" : ", ") + p;
    throw ConfigError("preset: unknown preset \"" + name + "\" (known: " + known + ")");
  }
}

namespace {

const char* renorm_name(RenormMode r) {
  switch (r) {
    case RenormMode::Exact: return "exact";
    case RenormMode::AdditiveEps: return "additive_eps";
    case RenormMode::Shift: return "shift";
  }
  return "exact";
}
const char* encoder_name(EncoderKind e) { return e == EncoderKind::Gaussian ? "gaussian" : "mlp"; }
const char* query_name(QueryAssignment q) { return q == QueryAssignment::Nearest ? "nearest" : "knn"; }
const char* velocity_name(VelocityKind v) {
  switch (v) {
    case VelocityKind::Zero:
      return "zero";
    case VelocityKind::Uniform:
      return "uniform";
    case VelocityKind::Shear:
      return "shear";
  }
  return "?";
}

// Walks a JSON object, dispatching each key to a setter; unknown keys throw.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  Section& field(const std::string& key, T& target) {
    known_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return *this;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer()) throw ConfigError("");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError("");
      } else {
        if (!it->is_string()) throw ConfigError("");
      }
      target = it->get<T>();
    } catch (const std::exception&) {
      throw ConfigError(path_ + "." + key + ": wrong type (got " + it->dump() + ")");
    }
    return *this;
  }

  template <typename E>
  Section& choice(const std::string& key, E& target, const std::map<std::string, E>& options) {
    known_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return *this;
    if (it->is_string()) {
      auto o = options.find(it->get<std::string>());
      if (o != options.end()) {
        target = o->second;
        return *this;
      }
    }
    std::string allowed;
    for (const auto& [k, v] : options) allowed += (allowed.empty() ? "" : ", ") + k;
    throw ConfigError(path_ + "." + key + ": must be one of " + allowed + " (got " + it->dump() + ")");
  }

  Section& sub(const std::string& key, const std::function<void(Section&)>& fn) {
    known_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return *this;
    Section s(*it, path_.empty() ? key : path_ + "." + key);
    fn(s);
    s.finish();
    return *this;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!known_.count(it.key())) throw ConfigError((path_.empty() ? "" : path_ + ".") + it.key() + ": unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> known_;
};

}  // namespace

json to_json(const ExperimentConfig& c) {
  const ModelConfig& m = c.model;
  const TrainConfig& t = c.training;
  const DataConfig& d = c.data;
  json j;
  j["model"] = {{"c_in", m.c_in},
                {"c_out", m.c_out},
                {"dim", m.dim},
                {"hidden_dim", m.hidden_dim},
                {"num_layers", m.num_layers},
                {"num_heads", m.num_heads},
                {"num_gaussians", m.num_gaussians},
                {"head_dim", m.head_dim},
                {"decoder_hidden", m.decoder_hidden},
                {"fourier_m", m.fourier_m},
                {"sigma_B", m.sigma_B},
                {"lambda", m.lambda},
                {"learn_lambda", m.learn_lambda},
                {"eps", m.eps},
                {"tie_wz", m.tie_wz},
                {"renorm", renorm_name(m.renorm)},
                {"sigma_min", m.sigma_min},
                {"sigma_max", m.sigma_max},
                {"sigma_init", m.sigma_init},
                {"reg_mu", m.reg_mu_weight},
                {"reg_sigma", m.reg_sigma_weight},
                {"aux", m.aux_weight},
                {"encoder", encoder_name(m.encoder)},
                {"query", query_name(m.query)},
                {"knn_k", m.knn_k}};
  j["training"] = {{"lr0", t.lr0},
                   {"step_period", t.step_period},
                   {"gamma", t.gamma},
                   {"weight_decay", t.adamw.weight_decay},
                   {"beta1", t.adamw.beta1},
                   {"beta2", t.adamw.beta2},
                   {"adam_eps", t.adamw.eps},
                   {"batch", t.batch},
                   {"epochs", t.epochs},
                   {"patience", t.patience},
                   {"seed", t.seed},
                   {"grad_clip", t.grad_clip},
                   {"target_val", t.target_val},
                   {"precision", c.precision}};
  j["data"] = {{"n", d.synth.n},
               {"nu", d.synth.nu},
               {"velocity",
                {{"kind", velocity_name(d.synth.velocity.kind)},
                 {"ux", d.synth.velocity.ux},
                 {"uy", d.synth.velocity.uy},
                 {"amp", d.synth.velocity.amp}}},
               {"dt", d.synth.dt},
               {"steps_per_pair", d.synth.steps_per_pair},
               {"spectrum_p", d.synth.spectrum_p},
               {"seed", d.synth.seed},
               {"n_traj", d.n_traj},
               {"horizon", d.horizon},
               {"split", {{"train", d.split.train}, {"val", d.split.val}, {"test", d.split.test}}},
               {"mask_fraction", d.mask_fraction},
               {"mask_seed", d.mask_seed},
               {"path", d.path}};
  j["eval"] = {{"rollout_T", c.eval.rollout_T},
               {"k_lo", c.eval.k_lo},
               {"k_hi", c.eval.k_hi},
               {"query_n", c.eval.query_n}};
  return j;
}

ExperimentConfig from_json(const json& j, ExperimentConfig c) {
  Section root(j, "");
  root.sub("model", [&](Section& s) {
    ModelConfig& m = c.model;
    s.field("c_in", m.c_in)
        .field("c_out", m.c_out)
        .field("dim", m.dim)
        .field("hidden_dim", m.hidden_dim)
        .field("num_layers", m.num_layers)
        .field("num_heads", m.num_heads)
        .field("num_gaussians", m.num_gaussians)
        .field("head_dim", m.head_dim)
        .field("decoder_hidden", m.decoder_hidden)
        .field("fourier_m", m.fourier_m)
        .field("sigma_B", m.sigma_B)
        .field("lambda", m.lambda)
        .field("learn_lambda", m.learn_lambda)
        .field("eps", m.eps)
        .field("tie_wz", m.tie_wz)
        .choice("renorm", m.renorm, {{"exact", RenormMode::Exact}, {"additive_eps", RenormMode::AdditiveEps},
                                       {"shift", RenormMode::Shift}})
        .field("sigma_min", m.sigma_min)
        .field("sigma_max", m.sigma_max)
        .field("sigma_init", m.sigma_init)
        .field("reg_mu", m.reg_mu_weight)
        .field("reg_sigma", m.reg_sigma_weight)
        .field("aux", m.aux_weight)
        .choice("encoder", m.encoder, {{"gaussian", EncoderKind::Gaussian}, {"mlp", EncoderKind::PlainMlp}})
        .choice("query", m.query, {{"nearest", QueryAssignment::Nearest}, {"knn", QueryAssignment::KNearest}})
        .field("knn_k", m.knn_k);
  });
  root.sub("training", [&](Section& s) {
    TrainConfig& t = c.training;
    s.field("lr0", t.lr0)
        .field("step_period", t.step_period)
        .field("gamma", t.gamma)
        .field("weight_decay", t.adamw.weight_decay)
        .field("beta1", t.adamw.beta1)
        .field("beta2", t.adamw.beta2)
        .field("adam_eps", t.adamw.eps)
        .field("batch", t.batch)
        .field("epochs", t.epochs)
        .field("patience", t.patience)
        .field("seed", t.seed)
        .field("grad_clip", t.grad_clip)
        .field("target_val", t.target_val)
        .field("precision", c.precision);
  });
  root.sub("data", [&](Section& s) {
    DataConfig& d = c.data;
    s.field("n", d.synth.n)
        .field("nu", d.synth.nu)
        .sub("velocity",
             [&](Section& v) {
               v.choice("kind", d.synth.velocity.kind,
                        {{"zero", VelocityKind::Zero}, {"uniform", VelocityKind::Uniform}, {"shear", VelocityKind::Shear}})
                   .field("ux", d.synth.velocity.ux)
                   .field("uy", d.synth.velocity.uy)
                   .field("amp", d.synth.velocity.amp);
             })
        .field("dt", d.synth.dt)
        .field("steps_per_pair", d.synth.steps_per_pair)
        .field("spectrum_p", d.synth.spectrum_p)
        .field("seed", d.synth.seed)
        .field("n_traj", d.n_traj)
        .field("horizon", d.horizon)
        .sub("split",
             [&](Section& sp) { sp.field("train", d.split.train).field("val", d.split.val).field("test", d.split.test); })
        .field("mask_fraction", d.mask_fraction)
        .field("mask_seed", d.mask_seed)
        .field("path", d.path);
  });
  root.sub("eval", [&](Section& s) {
    s.field("rollout_T", c.eval.rollout_T)
        .field("k_lo", c.eval.k_lo)
        .field("k_hi", c.eval.k_hi)
        .field("query_n", c.eval.query_n);
  });
  root.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path, ExperimentConfig base) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path);
  json j;
  try {
    is >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + path + " is not valid JSON: " + e.what());
  }
  return from_json(j, std::move(base));
}

std::string config_hash(const ExperimentConfig& cfg) {
  const std::string s = to_json(cfg).dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

}  // namespace gpo
