#include "dit/config.hpp"

#include <array>

#include <nlohmann/json.hpp>

#include "dit/errors.hpp"

namespace dit {

namespace {

struct SizePreset {
  std::string_view name;
  int depth, hidden, heads;
};

constexpr std::array<SizePreset, 4> kSizes{{
    {"S", 12, 384, 6},
    {"B", 12, 768, 12},
    {"L", 24, 1024, 16},
    {"XL", 28, 1152, 16},
}};

}  // namespace

std::string_view variant_name(BlockVariant variant) {
  switch (variant) {
    case BlockVariant::kInContext: return "in-context";
    case BlockVariant::kCrossAttention: return "cross-attention";
    case BlockVariant::kAdaLN: return "adaln";
    case BlockVariant::kAdaLNZero: return "adaln-zero";
  }
  return "?";
}

BlockVariant parse_variant(std::string_view name) {
  for (auto v : all_variants()) {
    if (variant_name(v) == name) return v;
  }
  if (name == "incontext" || name == "in_context") return BlockVariant::kInContext;
  if (name == "cross" || name == "cross_attention") return BlockVariant::kCrossAttention;
  if (name == "adaln_zero" || name == "adaLN-Zero") return BlockVariant::kAdaLNZero;
  if (name == "adaLN") return BlockVariant::kAdaLN;
  throw ConfigError("unknown block variant '" + std::string(name) +
                    "' (expected in-context, cross-attention, adaln or adaln-zero)");
}

const std::vector<BlockVariant>& all_variants() {
  static const std::vector<BlockVariant> v{BlockVariant::kInContext, BlockVariant::kCrossAttention,
                                           BlockVariant::kAdaLN, BlockVariant::kAdaLNZero};
  return v;
}

void DiTConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("invalid model config: " + msg); };
  if (depth < 1) fail("depth must be >= 1");
  if (hidden < 4 || heads < 1) fail("hidden and heads must be positive");
  if (hidden % heads != 0) fail("hidden " + std::to_string(hidden) + " not divisible by heads " + std::to_string(heads));
  if (hidden % 4 != 0) fail("hidden must be divisible by 4 for 2-D sine-cosine position embeddings");
  if (patch < 1 || input_size < 1 || channels < 1) fail("patch, input and channels must be positive");
  if (input_size % patch != 0) {
    fail("input " + std::to_string(input_size) + " not divisible by patch " + std::to_string(patch));
  }
  if (num_classes < 1) fail("num_classes must be >= 1");
  if (!(class_dropout_prob >= 0.0 && class_dropout_prob <= 1.0)) fail("class_dropout_prob must lie in [0, 1]");
}

DiTConfig mini_config(BlockVariant variant) {
  DiTConfig c;
  c.variant = variant;
  return c;
}

DiTConfig named_config(std::string_view name, int input_size, int channels, int num_classes) {
  if (name == "mini") return mini_config();
  std::string_view s = name;
  if (s.starts_with("DiT-")) s.remove_prefix(4);
  const auto slash = s.find('/');
  if (slash == std::string_view::npos) {
    throw ConfigError("model name '" + std::string(name) + "' should look like S/2, B/4, L/8 or XL/2");
  }
  const auto size = s.substr(0, slash);
  int patch = 0;
  try {
    patch = std::stoi(std::string(s.substr(slash + 1)));
  } catch (const std::exception&) {
    throw ConfigError("bad patch size in model name '" + std::string(name) + "'");
  }
  for (const auto& preset : kSizes) {
    if (preset.name == size) {
      DiTConfig c;
      c.depth = preset.depth;
      c.hidden = preset.hidden;
      c.heads = preset.heads;
      c.patch = patch;
      c.input_size = input_size;
      c.channels = channels;
      c.num_classes = num_classes;
      c.validate();
      return c;
    }
  }
  throw ConfigError("unknown model size '" + std::string(size) + "' (expected S, B, L or XL)");
}

std::vector<NamedConfig> standard_configs(int input_size) {
  std::vector<NamedConfig> out;
  for (const auto& preset : kSizes) {
    for (int p : {8, 4, 2}) {
      auto name = std::string(preset.name) + "/" + std::to_string(p);
      out.push_back({name, named_config(name, input_size)});
    }
  }
  return out;
}

void to_json(nlohmann::json& j, const DiTConfig& c) {
  j = nlohmann::json{{"depth", c.depth},
                     {"hidden", c.hidden},
                     {"heads", c.heads},
                     {"patch", c.patch},
                     {"input", c.input_size},
                     {"channels", c.channels},
                     {"classes", c.num_classes},
                     {"variant", std::string(variant_name(c.variant))},
                     {"dropout", c.class_dropout_prob}};
}

void from_json(const nlohmann::json& j, DiTConfig& c) {
  try {
    if (j.contains("name")) {
      c = named_config(j.at("name").get<std::string>(), j.value("input", 32), j.value("channels", 4),
                       j.value("classes", 1000));
    }
    c.depth = j.value("depth", c.depth);
    c.hidden = j.value("hidden", c.hidden);
    c.heads = j.value("heads", c.heads);
    c.patch = j.value("patch", c.patch);
    c.input_size = j.value("input", c.input_size);
    c.channels = j.value("channels", c.channels);
    c.num_classes = j.value("classes", c.num_classes);
    if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
    c.class_dropout_prob = j.value("dropout", c.class_dropout_prob);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
}

}  // namespace dit
