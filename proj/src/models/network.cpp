#include "tdce/models/network.hpp"

#include <cmath>
#include <random>

#include "tdce/common/error.hpp"
#include "tdce/common/random.hpp"
#include "tdce/models/colormap.hpp"

namespace tdce::models {

using diff::ParamSet;
using diff::Tape;
using diff::Tensor;
using diff::Var;
using nlohmann::json;

std::string to_string(FrontEnd f) {
  switch (f) {
    case FrontEnd::tdce:
      return "tdce";
    case FrontEnd::replicate:
      return "replicate";
    case FrontEnd::colormap:
      return "colormap";
  }
  return "?";
}

FrontEnd parse_front_end(const std::string& s) {
  if (s == "tdce") return FrontEnd::tdce;
  if (s == "replicate") return FrontEnd::replicate;
  if (s == "colormap") return FrontEnd::colormap;
  throw ValidationError("unknown front end '" + s + "' (expected tdce|replicate|colormap)");
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"front_end", to_string(c.front_end)},
           {"input_height", c.input_height},
           {"input_width", c.input_width},
           {"colormap", c.colormap},
           {"tdce",
            {{"depth", c.tdce.depth},
             {"base_channels", c.tdce.base_channels},
             {"in_channels", c.tdce.in_channels},
             {"out_channels", c.tdce.out_channels}}},
           {"backbone",
            {{"widths", c.backbone.widths},
             {"frozen", c.backbone.frozen},
             {"init", c.backbone.init == BackboneInit::seeded_random ? "seeded-random" : "external-checkpoint"},
             {"checkpoint", c.backbone.checkpoint}}},
           {"head", {{"hidden", c.head.hidden}}}};
}

void from_json(const json& j, ModelConfig& c) {
  c = ModelConfig{};
  if (j.contains("front_end")) c.front_end = parse_front_end(j.at("front_end").get<std::string>());
  c.input_height = j.value("input_height", c.input_height);
  c.input_width = j.value("input_width", c.input_width);
  c.colormap = j.value("colormap", c.colormap);
  if (j.contains("tdce")) {
    const auto& t = j.at("tdce");
    c.tdce.depth = t.value("depth", c.tdce.depth);
    c.tdce.base_channels = t.value("base_channels", c.tdce.base_channels);
    c.tdce.in_channels = t.value("in_channels", c.tdce.in_channels);
    c.tdce.out_channels = t.value("out_channels", c.tdce.out_channels);
  }
  if (j.contains("backbone")) {
    const auto& b = j.at("backbone");
    c.backbone.widths = b.value("widths", c.backbone.widths);
    c.backbone.frozen = b.value("frozen", c.backbone.frozen);
    const std::string init = b.value("init", std::string("seeded-random"));
    if (init == "seeded-random")
      c.backbone.init = BackboneInit::seeded_random;
    else if (init == "external-checkpoint")
      c.backbone.init = BackboneInit::external_checkpoint;
    else
      throw ValidationError("backbone.init must be seeded-random|external-checkpoint, got '" + init + "'");
    c.backbone.checkpoint = b.value("checkpoint", std::string());
  }
  if (j.contains("head")) c.head.hidden = j.at("head").value("hidden", c.head.hidden);
}

void validate(const ModelConfig& c) {
  if (c.tdce.out_channels != 3) throw ValidationError("tdce.out_channels must be 3");
  if (c.tdce.in_channels != 1) throw ValidationError("tdce.in_channels must be 1");
  if (c.tdce.depth < 1) throw ValidationError("tdce.depth must be >= 1");
  if (c.tdce.base_channels < 1) throw ValidationError("tdce.base_channels must be >= 1");
  if (c.backbone.widths.empty()) throw ValidationError("backbone.widths must not be empty");
  for (int w : c.backbone.widths)
    if (w < 1) throw ValidationError("backbone.widths entries must be >= 1");
  if (c.head.hidden < 1) throw ValidationError("head.hidden must be >= 1");
  if (c.input_height < 1 || c.input_width < 1) throw ValidationError("input size must be >= 1");
  if (c.front_end == FrontEnd::tdce) {
    const int mult = 1 << c.tdce.depth;
    if (c.input_height % mult || c.input_width % mult)
      throw ValidationError("input " + std::to_string(c.input_height) + "x" + std::to_string(c.input_width) +
                            " must be divisible by " + std::to_string(mult) + " for tdce depth " +
                            std::to_string(c.tdce.depth));
  }
  if (c.front_end == FrontEnd::colormap) colormap_by_name(c.colormap);
  if (c.backbone.init == BackboneInit::external_checkpoint && c.backbone.checkpoint.empty())
    throw ValidationError("backbone.checkpoint is required for external-checkpoint init");
}

namespace {

void add_conv(ParamSet& ps, Rng& rng, const std::string& name, int cin, int cout, int k, bool trainable) {
  const double stddev = std::sqrt(2.0 / (cin * k * k));
  std::normal_distribution<double> nd(0.0, stddev);
  Tensor w({static_cast<std::size_t>(cout), static_cast<std::size_t>(cin), static_cast<std::size_t>(k),
            static_cast<std::size_t>(k)});
  for (double& v : w.storage()) v = nd(rng);
  ps.add(name + ".weight", std::move(w), trainable);
  ps.add(name + ".bias", Tensor({static_cast<std::size_t>(cout)}, 0.0), trainable);
}

void add_dense(ParamSet& ps, Rng& rng, const std::string& name, int in, int out, bool trainable) {
  const double stddev = std::sqrt(2.0 / in);
  std::normal_distribution<double> nd(0.0, stddev);
  Tensor w({static_cast<std::size_t>(out), static_cast<std::size_t>(in)});
  for (double& v : w.storage()) v = nd(rng);
  ps.add(name + ".weight", std::move(w), trainable);
  ps.add(name + ".bias", Tensor({static_cast<std::size_t>(out)}, 0.0), trainable);
}

int level_channels(const TdceConfig& t, int level) { return t.base_channels << level; }

Var conv(Tape& tape, const std::string& name, Var x, diff::Conv2dOptions opt = {}) {
  return tape.conv2d(x, tape.param(name + ".weight"), tape.param(name + ".bias"), opt);
}

}  // namespace

ParamSet init_params(const ModelConfig& c, std::uint64_t seed) {
  validate(c);
  ParamSet ps;
  // Separate streams so that e.g. the backbone is identical across regimes
  // that share a seed.
  if (c.front_end == FrontEnd::tdce) {
    Rng rng = make_rng(seed, {1});
    const auto& t = c.tdce;
    int cin = t.in_channels;
    for (int l = 0; l < t.depth; ++l) {
      add_conv(ps, rng, "tdce.enc" + std::to_string(l), cin, level_channels(t, l), 3, true);
      cin = level_channels(t, l);
    }
    add_conv(ps, rng, "tdce.bottleneck", cin, level_channels(t, t.depth), 3, true);
    cin = level_channels(t, t.depth);
    for (int l = t.depth - 1; l >= 0; --l) {
      const int ch = level_channels(t, l);
      add_conv(ps, rng, "tdce.up" + std::to_string(l), cin, ch, 3, true);
      add_conv(ps, rng, "tdce.dec" + std::to_string(l), 2 * ch, ch, 3, true);
      cin = ch;
    }
    add_conv(ps, rng, "tdce.out", cin, t.out_channels, 1, true);
  }
  {
    Rng rng = make_rng(seed, {2});
    int cin = 3;
    for (std::size_t s = 0; s < c.backbone.widths.size(); ++s) {
      add_conv(ps, rng, "backbone.stage" + std::to_string(s), cin, c.backbone.widths[s], 3, !c.backbone.frozen);
      cin = c.backbone.widths[s];
    }
  }
  {
    Rng rng = make_rng(seed, {3});
    add_dense(ps, rng, "head.fc1", c.backbone.widths.back(), c.head.hidden, true);
    add_dense(ps, rng, "head.fc2", c.head.hidden, 1, true);
  }
  return ps;
}

std::vector<std::string> backbone_stage_prefixes(const ModelConfig& c) {
  std::vector<std::string> out;
  for (std::size_t s = 0; s < c.backbone.widths.size(); ++s) out.push_back("backbone.stage" + std::to_string(s) + ".");
  return out;
}

void copy_prefix(ParamSet& dst, const ParamSet& src, const std::string& prefix) {
  std::size_t copied = 0;
  for (const auto& p : src) {
    if (!p.name.starts_with(prefix)) continue;
    auto& d = dst.at(p.name);
    if (d.value.shape() != p.value.shape())
      throw ValidationError("parameter " + p.name + ": shape " + diff::to_string(p.value.shape()) + " vs " +
                            diff::to_string(d.value.shape()));
    d.value = p.value;
    ++copied;
  }
  for (const auto& p : dst)
    if (p.name.starts_with(prefix) && !src.contains(p.name))
      throw ValidationError("source is missing parameter " + p.name);
  if (copied == 0) throw ValidationError("no parameters under prefix '" + prefix + "'");
}

Var tdce_forward(Tape& tape, const ModelConfig& c, Var gray) {
  const auto& t = c.tdce;
  const auto& in_shape = tape.value(gray).shape();
  const std::size_t mult = std::size_t{1} << t.depth;
  if (in_shape.size() != 3 || in_shape[0] != 1)
    throw diff::ShapeError("tdce: input must be (1,H,W), got " + diff::to_string(in_shape));
  if (in_shape[1] % mult || in_shape[2] % mult)
    throw diff::ShapeError("tdce: input " + diff::to_string(in_shape) + " spatial dims must be multiples of " +
                           std::to_string(mult));
  std::vector<Var> skips;
  Var x = gray;
  for (int l = 0; l < t.depth; ++l) {
    x = tape.relu(conv(tape, "tdce.enc" + std::to_string(l), x));
    skips.push_back(x);
    x = tape.max_pool2(x);
  }
  x = tape.relu(conv(tape, "tdce.bottleneck", x));
  for (int l = t.depth - 1; l >= 0; --l) {
    Var up = tape.relu(conv(tape, "tdce.up" + std::to_string(l), tape.upsample2(x)));
    const auto& us = tape.value(up).shape();
    const auto& ss = tape.value(skips[l]).shape();
    if (us != ss)
      throw diff::ShapeError("tdce: decoder level " + std::to_string(l) + " map " + diff::to_string(us) +
                             " does not match encoder skip " + diff::to_string(ss));
    x = tape.relu(conv(tape, "tdce.dec" + std::to_string(l), tape.concat({up, skips[l]})));
  }
  return tape.sigmoid(conv(tape, "tdce.out", x));
}

Var backbone_forward(Tape& tape, const ModelConfig& c, Var rgb) {
  const auto& s = tape.value(rgb).shape();
  if (s.size() != 3 || s[0] != 3) throw diff::ShapeError("backbone: input must be (3,H,W), got " + diff::to_string(s));
  Var x = rgb;
  for (std::size_t st = 0; st < c.backbone.widths.size(); ++st) {
    diff::Conv2dOptions opt;
    opt.stride = st == 0 ? 1 : 2;
    x = tape.relu(conv(tape, "backbone.stage" + std::to_string(st), x, opt));
  }
  return tape.global_avg_pool(x);
}

Var head_forward(Tape& tape, const ModelConfig&, Var features) {
  Var h = tape.relu(tape.dense(features, tape.param("head.fc1.weight"), tape.param("head.fc1.bias")));
  return tape.dense(h, tape.param("head.fc2.weight"), tape.param("head.fc2.bias"));
}

Var logit_forward(Tape& tape, const ModelConfig& c, Var input) {
  Var rgb;
  switch (c.front_end) {
    case FrontEnd::tdce:
      rgb = tdce_forward(tape, c, input);
      break;
    case FrontEnd::replicate:
      rgb = tape.concat({input, input, input});
      break;
    case FrontEnd::colormap:
      rgb = input;
      break;
  }
  return head_forward(tape, c, backbone_forward(tape, c, rgb));
}

Tensor to_tensor(const imaging::PreprocessedImage& img) {
  return Tensor({1, static_cast<std::size_t>(img.height), static_cast<std::size_t>(img.width)}, img.values);
}

Tensor to_tensor(const imaging::RgbImage& img) {
  const std::size_t n = static_cast<std::size_t>(img.height) * img.width;
  Tensor t({3, static_cast<std::size_t>(img.height), static_cast<std::size_t>(img.width)});
  for (std::size_t c = 0; c < 3; ++c) std::copy(img.channels[c].begin(), img.channels[c].end(), t.ptr() + c * n);
  return t;
}

imaging::RgbImage to_rgb(const Tensor& t) {
  if (t.rank() != 3 || t.dim(0) != 3) throw diff::ShapeError("to_rgb: expected (3,H,W), got " + diff::to_string(t.shape()));
  imaging::RgbImage img(static_cast<int>(t.dim(1)), static_cast<int>(t.dim(2)));
  const std::size_t n = t.dim(1) * t.dim(2);
  for (std::size_t c = 0; c < 3; ++c)
    std::copy(t.ptr() + c * n, t.ptr() + (c + 1) * n, img.channels[c].begin());
  return img;
}

Tensor model_input(const ModelConfig& c, const imaging::PreprocessedImage& img) {
  if (img.height != c.input_height || img.width != c.input_width)
    throw diff::ShapeError("image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                           " does not match model input " + std::to_string(c.input_height) + "x" +
                           std::to_string(c.input_width));
  if (c.front_end == FrontEnd::colormap) return to_tensor(apply_colormap(img, colormap_by_name(c.colormap)));
  return to_tensor(img);
}

imaging::RgbImage tdce_encode(const imaging::PreprocessedImage& img, const ParamSet& params, const ModelConfig& c) {
  Tape tape(params);
  Var x = tape.input(to_tensor(img));
  return to_rgb(tape.value(tdce_forward(tape, c, x)));
}

imaging::RgbImage replicate_channels(const imaging::PreprocessedImage& img) {
  imaging::RgbImage out(img.height, img.width);
  for (auto& ch : out.channels) ch = img.values;
  return out;
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double classify(const imaging::RgbImage& rgb, const ParamSet& params, const ModelConfig& c) {
  if (rgb.height != c.input_height || rgb.width != c.input_width)
    throw diff::ShapeError("classify: image " + std::to_string(rgb.height) + "x" + std::to_string(rgb.width) +
                           " does not match model input " + std::to_string(c.input_height) + "x" +
                           std::to_string(c.input_width));
  Tape tape(params);
  Var x = tape.input(to_tensor(rgb));
  return sigmoid(tape.value(head_forward(tape, c, backbone_forward(tape, c, x)))[0]);
}

double predict_probability(const imaging::PreprocessedImage& img, const ParamSet& params, const ModelConfig& c) {
  Tape tape(params);
  Var x = tape.input(model_input(c, img));
  return sigmoid(tape.value(logit_forward(tape, c, x))[0]);
}

}  // namespace tdce::models
