#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "tdce/diffcore/param_set.hpp"
#include "tdce/diffcore/tape.hpp"
#include "tdce/imaging/image.hpp"

namespace tdce::models {

// U-Net style encoder-decoder, 1 -> 3 channels. Each level is one 3x3
// conv + relu; the decoder upsamples (nearest, 2x), convolves, concatenates
// the matching encoder map and convolves again. Output: 1x1 conv + sigmoid.
struct TdceConfig {
  int depth = 3;
  int base_channels = 16;
  int in_channels = 1;
  int out_channels = 3;
};

enum class BackboneInit { seeded_random, external_checkpoint };

// Plain conv stages (3x3 + relu), stride 2 between stages, then global
// average pooling.
struct BackboneConfig {
  std::vector<int> widths{16, 32, 64, 128};
  bool frozen = true;
  BackboneInit init = BackboneInit::seeded_random;
  std::string checkpoint;  // used with external_checkpoint
};

struct HeadConfig {
  int hidden = 64;
};

enum class FrontEnd { tdce, replicate, colormap };

struct ModelConfig {
  FrontEnd front_end = FrontEnd::tdce;
  TdceConfig tdce;
  BackboneConfig backbone;
  HeadConfig head;
  int input_height = 256;
  int input_width = 256;
  std::string colormap = "heat";  // used with FrontEnd::colormap
};

std::string to_string(FrontEnd f);
FrontEnd parse_front_end(const std::string& s);

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Throws ValidationError naming the offending field.
void validate(const ModelConfig& c);

// He-normal weights, zero biases. Backbone parameters carry
// trainable = !backbone.frozen; TDCE and head parameters are trainable.
diff::ParamSet init_params(const ModelConfig& c, std::uint64_t seed);

// Names of backbone stages in forward order ("backbone.stage0", ...).
std::vector<std::string> backbone_stage_prefixes(const ModelConfig& c);

// Copies every parameter under `prefix` from src into dst; shapes must match.
void copy_prefix(diff::ParamSet& dst, const diff::ParamSet& src, const std::string& prefix);

diff::Var tdce_forward(diff::Tape& tape, const ModelConfig& c, diff::Var gray);
diff::Var backbone_forward(diff::Tape& tape, const ModelConfig& c, diff::Var rgb);
diff::Var head_forward(diff::Tape& tape, const ModelConfig& c, diff::Var features);
// Front end (per config) -> backbone -> head. `input` is (1,H,W) for the
// tdce/replicate front ends and an already-encoded (3,H,W) for colormap.
diff::Var logit_forward(diff::Tape& tape, const ModelConfig& c, diff::Var input);

diff::Tensor to_tensor(const imaging::PreprocessedImage& img);
diff::Tensor to_tensor(const imaging::RgbImage& img);
imaging::RgbImage to_rgb(const diff::Tensor& t);

// Network input tensor for a preprocessed image under the configured front end.
diff::Tensor model_input(const ModelConfig& c, const imaging::PreprocessedImage& img);

imaging::RgbImage tdce_encode(const imaging::PreprocessedImage& img, const diff::ParamSet& params,
                              const ModelConfig& c);
imaging::RgbImage replicate_channels(const imaging::PreprocessedImage& img);

// Backbone + head on an encoded image; probability of "suspicious".
double classify(const imaging::RgbImage& rgb, const diff::ParamSet& params, const ModelConfig& c);
// Full model (front end included) on a preprocessed image.
double predict_probability(const imaging::PreprocessedImage& img, const diff::ParamSet& params,
                           const ModelConfig& c);

double sigmoid(double z);

}  // namespace tdce::models
