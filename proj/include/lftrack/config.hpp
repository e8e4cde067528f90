#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lftrack/esi.hpp"
#include "lftrack/track.hpp"
#include "lftrack/train.hpp"

namespace lftrack {

// Every tunable knob of the pipeline, serialized as a flat key=value text
// file (one or more pairs per line, '#' starts a comment). Unknown keys are
// rejected; command-line overrides are applied after the file, last one wins.
struct RunConfig {
  // structure-image extraction
  int d = 1;
  EsiVariant variant = EsiVariant::amplitude;
  ChannelPolicy channel_policy = ChannelPolicy::luma;
  int u_sel = -1;  // -1 selects the central view
  int v_sel = -1;

  // joint encoder
  Index patch_size = 8;
  Index c_emb = 32;
  Index depth = 2;
  Index heads = 2;
  bool norm_pre = true;

  // masked side branch
  bool gas = true;
  double tau = 1.0;
  nn::MaskMode mask_mode = nn::MaskMode::post_softmax;
  gas::RelationMode relation_mode = gas::RelationMode::full;

  // reconstruction objective
  double rho = 0.5;
  double p_drop = 0.3;
  Index decoder_depth = 4;
  Index decoder_heads = 2;
  bool ssl_literal = false;

  // loss mix
  double lambda1 = 1, lambda2 = 1, lambda3 = 1;

  // optimization
  double lr = 1e-3;
  double weight_decay = 1e-4;
  Index steps = 200;
  std::uint64_t seed = 1;
  Index max_pair_gap = 4;
  double jitter_px = 8;
  double scale_jitter = 0.35;

  // tracker crops
  Index template_size = 32;
  Index search_size = 64;
  double search_scale = 4.0;
  double template_scale = 2.0;
  double size_damping = 0.3;
};

// One config key with its doc line, for --help listings.
struct ConfigKey {
  std::string name;
  std::string doc;
};

// All recognized keys in declaration order.
const std::vector<ConfigKey>& run_config_keys();

// Applies a single key=value assignment; throws ValidationError on an unknown
// key or an unparsable / out-of-contract value.
void apply_run_kv(RunConfig& cfg, const std::string& key, const std::string& value);

// Parses "key=value" (exactly one '=') and applies it.
void apply_run_assignment(RunConfig& cfg, const std::string& assignment);

// Reads a flat key=value file into an existing config (later keys win).
void load_run_config(RunConfig& cfg, const std::filesystem::path& path);

// Writes every knob back out in the file format load_run_config reads.
void save_run_config(const RunConfig& cfg, const std::filesystem::path& path);

// Cross-field validation through the module contracts the values feed.
void validate_run_config(const RunConfig& cfg);

// Views of the bag consumed by the individual modules.
EsiConfig esi_config(const RunConfig& cfg);
track::ModelConfig model_config(const RunConfig& cfg);
train::TrainConfig train_config(const RunConfig& cfg);

// Enum spellings shared by the parser and the writer.
std::string to_string(EsiVariant v);
std::string to_string(ChannelPolicy p);
std::string to_string(nn::MaskMode m);
std::string to_string(gas::RelationMode m);

}  // namespace lftrack
