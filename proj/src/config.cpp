#include "lftrack/config.hpp"

#include <fstream>
#include <sstream>

namespace lftrack {

namespace {

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw ValidationError("config: bad boolean '" + v + "' for " + key);
}

EsiVariant parse_variant(const std::string& v) {
  if (v == "amplitude") return EsiVariant::amplitude;
  if (v == "max") return EsiVariant::max;
  if (v == "mean") return EsiVariant::mean;
  if (v == "sum") return EsiVariant::sum;
  if (v == "h_only") return EsiVariant::h_only;
  if (v == "v_only") return EsiVariant::v_only;
  throw ValidationError("config: bad variant '" + v +
                        "' (amplitude|max|mean|sum|h_only|v_only)");
}

ChannelPolicy parse_policy(const std::string& v) {
  if (v == "luma") return ChannelPolicy::luma;
  if (v == "per_channel") return ChannelPolicy::per_channel;
  throw ValidationError("config: bad channel_policy '" + v + "' (luma|per_channel)");
}

nn::MaskMode parse_mask_mode(const std::string& v) {
  if (v == "post_softmax") return nn::MaskMode::post_softmax;
  if (v == "pre_softmax") return nn::MaskMode::pre_softmax;
  throw ValidationError("config: bad mask_mode '" + v + "' (post_softmax|pre_softmax)");
}

gas::RelationMode parse_relation_mode(const std::string& v) {
  if (v == "full") return gas::RelationMode::full;
  if (v == "intra") return gas::RelationMode::intra;
  if (v == "inter") return gas::RelationMode::inter;
  throw ValidationError("config: bad relation_mode '" + v + "' (full|intra|inter)");
}

}  // namespace

std::string to_string(EsiVariant v) {
  switch (v) {
    case EsiVariant::amplitude: return "amplitude";
    case EsiVariant::max: return "max";
    case EsiVariant::mean: return "mean";
    case EsiVariant::sum: return "sum";
    case EsiVariant::h_only: return "h_only";
    case EsiVariant::v_only: return "v_only";
  }
  return "amplitude";
}

std::string to_string(ChannelPolicy p) {
  return p == ChannelPolicy::luma ? "luma" : "per_channel";
}

std::string to_string(nn::MaskMode m) {
  switch (m) {
    case nn::MaskMode::none: return "none";
    case nn::MaskMode::post_softmax: return "post_softmax";
    case nn::MaskMode::pre_softmax: return "pre_softmax";
  }
  return "post_softmax";
}

std::string to_string(gas::RelationMode m) {
  switch (m) {
    case gas::RelationMode::full: return "full";
    case gas::RelationMode::intra: return "intra";
    case gas::RelationMode::inter: return "inter";
  }
  return "full";
}

const std::vector<ConfigKey>& run_config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"d", "angular step of the central differences (>= 1)"},
      {"variant", "structure-image variant: amplitude|max|mean|sum|h_only|v_only"},
      {"channel_policy", "RGB handling: luma|per_channel"},
      {"u_sel", "horizontal view used by selective variants (-1 = center)"},
      {"v_sel", "vertical view used by selective variants (-1 = center)"},
      {"patch_size", "square patch side in pixels"},
      {"c_emb", "token embedding width"},
      {"depth", "encoder layer count"},
      {"heads", "encoder attention heads"},
      {"norm", "normalization placement: pre|post"},
      {"gas", "enable the masked side branch: 0|1"},
      {"tau", "partition softmax temperature (> 0)"},
      {"mask_mode", "mask application: post_softmax|pre_softmax"},
      {"relation_mode", "token relation rule: full|intra|inter"},
      {"rho", "masking rate in (0,1)"},
      {"p_drop", "training-time spatial drop rate in [0,1]"},
      {"decoder_depth", "reconstruction decoder layer count"},
      {"decoder_heads", "reconstruction decoder attention heads"},
      {"ssl_literal", "reconstruction distance over all rows instead of masked rows: 0|1"},
      {"lambda1", "reconstruction loss weight (>= 0)"},
      {"lambda2", "classification loss weight (>= 0)"},
      {"lambda3", "regression loss weight (>= 0)"},
      {"lr", "learning rate"},
      {"weight_decay", "decoupled weight decay"},
      {"steps", "optimization step count (>= 1)"},
      {"seed", "master seed"},
      {"max_pair_gap", "largest |t1-t2| when sampling frame pairs (>= 1)"},
      {"jitter_px", "search-window center jitter during training (>= 0)"},
      {"scale_jitter", "log-scale bound for size-prior jitter during training (>= 0)"},
      {"template_size", "template crop side in pixels"},
      {"search_size", "search crop side in pixels"},
      {"search_scale", "search side as a multiple of the target side"},
      {"template_scale", "template side as a multiple of the target side"},
      {"size_damping", "fraction of the per-frame size estimate blended into the box (0,1]"},
  };
  return keys;
}

void apply_run_kv(RunConfig& cfg, const std::string& key, const std::string& value) {
  auto as_i = [&] {
    try {
      size_t pos = 0;
      const long long n = std::stoll(value, &pos);
      if (pos != value.size()) throw std::invalid_argument(value);
      return n;
    } catch (const std::exception&) {
      throw ValidationError("config: bad integer '" + value + "' for " + key);
    }
  };
  auto as_u = [&]() -> std::uint64_t {
    try {
      size_t pos = 0;
      const unsigned long long n = std::stoull(value, &pos);
      if (pos != value.size()) throw std::invalid_argument(value);
      return n;
    } catch (const std::exception&) {
      throw ValidationError("config: bad unsigned integer '" + value + "' for " + key);
    }
  };
  auto as_f = [&] {
    try {
      size_t pos = 0;
      const double x = std::stod(value, &pos);
      if (pos != value.size()) throw std::invalid_argument(value);
      return x;
    } catch (const std::exception&) {
      throw ValidationError("config: bad number '" + value + "' for " + key);
    }
  };

  if (key == "d") cfg.d = int(as_i());
  else if (key == "variant") cfg.variant = parse_variant(value);
  else if (key == "channel_policy") cfg.channel_policy = parse_policy(value);
  else if (key == "u_sel") cfg.u_sel = int(as_i());
  else if (key == "v_sel") cfg.v_sel = int(as_i());
  else if (key == "patch_size") cfg.patch_size = Index(as_i());
  else if (key == "c_emb") cfg.c_emb = Index(as_i());
  else if (key == "depth") cfg.depth = Index(as_i());
  else if (key == "heads") cfg.heads = Index(as_i());
  else if (key == "norm") {
    if (value == "pre") cfg.norm_pre = true;
    else if (value == "post") cfg.norm_pre = false;
    else throw ValidationError("config: bad norm '" + value + "' (pre|post)");
  } else if (key == "gas") cfg.gas = parse_bool(value, key);
  else if (key == "tau") cfg.tau = as_f();
  else if (key == "mask_mode") cfg.mask_mode = parse_mask_mode(value);
  else if (key == "relation_mode") cfg.relation_mode = parse_relation_mode(value);
  else if (key == "rho") cfg.rho = as_f();
  else if (key == "p_drop") cfg.p_drop = as_f();
  else if (key == "decoder_depth") cfg.decoder_depth = Index(as_i());
  else if (key == "decoder_heads") cfg.decoder_heads = Index(as_i());
  else if (key == "ssl_literal") cfg.ssl_literal = parse_bool(value, key);
  else if (key == "lambda1") cfg.lambda1 = as_f();
  else if (key == "lambda2") cfg.lambda2 = as_f();
  else if (key == "lambda3") cfg.lambda3 = as_f();
  else if (key == "lr") cfg.lr = as_f();
  else if (key == "weight_decay") cfg.weight_decay = as_f();
  else if (key == "steps") cfg.steps = Index(as_i());
  else if (key == "seed") cfg.seed = as_u();
  else if (key == "max_pair_gap") cfg.max_pair_gap = Index(as_i());
  else if (key == "jitter_px") cfg.jitter_px = as_f();
  else if (key == "scale_jitter") cfg.scale_jitter = as_f();
  else if (key == "template_size") cfg.template_size = Index(as_i());
  else if (key == "search_size") cfg.search_size = Index(as_i());
  else if (key == "search_scale") cfg.search_scale = as_f();
  else if (key == "template_scale") cfg.template_scale = as_f();
  else if (key == "size_damping") cfg.size_damping = as_f();
  else throw ValidationError("config: unknown key '" + key + "'");
}

void apply_run_assignment(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ValidationError("config: expected key=value, got '" + assignment + "'");
  apply_run_kv(cfg, assignment.substr(0, eq), assignment.substr(eq + 1));
}

void load_run_config(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("config: cannot open '" + path.string() + "'");
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string item;
    while (ls >> item) {
      try {
        apply_run_assignment(cfg, item);
      } catch (const ValidationError& e) {
        throw ValidationError(std::string(e.what()) + " (line " + std::to_string(lineno) +
                              " of " + path.string() + ")");
      }
    }
  }
}

void save_run_config(const RunConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("config: cannot write '" + path.string() + "'");
  char buf[96];
  auto num = [&](const char* key, double v) {
    std::snprintf(buf, sizeof buf, "%s=%.17g\n", key, v);
    out << buf;
  };
  out << "d=" << cfg.d << "\n";
  out << "variant=" << to_string(cfg.variant) << "\n";
  out << "channel_policy=" << to_string(cfg.channel_policy) << "\n";
  out << "u_sel=" << cfg.u_sel << "\n";
  out << "v_sel=" << cfg.v_sel << "\n";
  out << "patch_size=" << cfg.patch_size << "\n";
  out << "c_emb=" << cfg.c_emb << "\n";
  out << "depth=" << cfg.depth << "\n";
  out << "heads=" << cfg.heads << "\n";
  out << "norm=" << (cfg.norm_pre ? "pre" : "post") << "\n";
  out << "gas=" << (cfg.gas ? 1 : 0) << "\n";
  num("tau", cfg.tau);
  out << "mask_mode=" << to_string(cfg.mask_mode) << "\n";
  out << "relation_mode=" << to_string(cfg.relation_mode) << "\n";
  num("rho", cfg.rho);
  num("p_drop", cfg.p_drop);
  out << "decoder_depth=" << cfg.decoder_depth << "\n";
  out << "decoder_heads=" << cfg.decoder_heads << "\n";
  out << "ssl_literal=" << (cfg.ssl_literal ? 1 : 0) << "\n";
  num("lambda1", cfg.lambda1);
  num("lambda2", cfg.lambda2);
  num("lambda3", cfg.lambda3);
  num("lr", cfg.lr);
  num("weight_decay", cfg.weight_decay);
  out << "steps=" << cfg.steps << "\n";
  out << "seed=" << cfg.seed << "\n";
  out << "max_pair_gap=" << cfg.max_pair_gap << "\n";
  num("jitter_px", cfg.jitter_px);
  num("scale_jitter", cfg.scale_jitter);
  out << "template_size=" << cfg.template_size << "\n";
  out << "search_size=" << cfg.search_size << "\n";
  num("search_scale", cfg.search_scale);
  num("template_scale", cfg.template_scale);
  num("size_damping", cfg.size_damping);
  if (!out) throw ValidationError("config: failed writing '" + path.string() + "'");
}

void validate_run_config(const RunConfig& cfg) {
  if (cfg.d < 1) throw ValidationError("config: d must be >= 1");
  if (cfg.u_sel < -1 || cfg.v_sel < -1)
    throw ValidationError("config: view selections must be -1 or a view index");
  if (cfg.steps < 1) throw ValidationError("config: steps must be >= 1");
  if (cfg.max_pair_gap < 1) throw ValidationError("config: max_pair_gap must be >= 1");
  if (cfg.jitter_px < 0) throw ValidationError("config: jitter_px must be >= 0");
  if (cfg.scale_jitter < 0) throw ValidationError("config: scale_jitter must be >= 0");
  if (!(cfg.lr > 0)) throw ValidationError("config: lr must be > 0");
  if (cfg.weight_decay < 0) throw ValidationError("config: weight_decay must be >= 0");
  model_config(cfg).validate();
  track::LossWeights lw{cfg.lambda1, cfg.lambda2, cfg.lambda3};
  lw.validate();
}

EsiConfig esi_config(const RunConfig& cfg) {
  EsiConfig e;
  e.d = cfg.d;
  e.variant = cfg.variant;
  e.policy = cfg.channel_policy;
  e.u_sel = cfg.u_sel;
  e.v_sel = cfg.v_sel;
  return e;
}

track::ModelConfig model_config(const RunConfig& cfg) {
  track::ModelConfig m;
  m.patch = cfg.patch_size;
  m.c_emb = cfg.c_emb;
  m.depth = cfg.depth;
  m.heads = cfg.heads;
  m.norm_pre = cfg.norm_pre;
  m.gas_enabled = cfg.gas;
  m.mask_mode = cfg.mask_mode;
  m.relation_mode = cfg.relation_mode;
  m.tau = cfg.tau;
  m.decoder_depth = cfg.decoder_depth;
  m.decoder_heads = cfg.decoder_heads;
  m.p_drop = cfg.p_drop;
  m.rho = cfg.rho;
  m.template_size = cfg.template_size;
  m.search_size = cfg.search_size;
  m.search_scale = cfg.search_scale;
  m.template_scale = cfg.template_scale;
  m.size_damping = cfg.size_damping;
  return m;
}

train::TrainConfig train_config(const RunConfig& cfg) {
  train::TrainConfig t;
  t.model = model_config(cfg);
  t.weights = {cfg.lambda1, cfg.lambda2, cfg.lambda3};
  t.lr = cfg.lr;
  t.weight_decay = cfg.weight_decay;
  t.steps = cfg.steps;
  t.seed = cfg.seed;
  t.max_pair_gap = cfg.max_pair_gap;
  t.jitter_px = cfg.jitter_px;
  t.scale_jitter = cfg.scale_jitter;
  t.ssl_literal = cfg.ssl_literal;
  return t;
}

}  // namespace lftrack
