#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "elip/tensor.hpp"

namespace elip {

// Frozen pre-norm ViT block of width d_clip. Matrices are (in, out).
struct FrozenLayer {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, bq, wk, bk, wv, bv;
  Tensor wo, bo;
  Tensor ln2_gain, ln2_bias;
  Tensor fc1, fc1_bias, fc2, fc2_bias;
};

// Everything precomputed from the language-image backbone for one stimulus
// set and one pair of prompts. Never trained.
struct EmbeddingBundle {
  std::size_t d_clip = 768;
  std::size_t d_enc = 512;
  std::size_t n_patch = 49;
  std::size_t heads = 12;
  std::size_t mlp_hidden = 3072;

  std::string target_prompt;
  std::string nontarget_prompt = "nontarget background";
  std::string se_target_word = "target";
  std::string se_nontarget_word = "nontarget";
  // How the exporter mapped text embeddings into token space; opaque here.
  std::string se_mapping = "unspecified";

  std::size_t image_count = 0;
  std::vector<float> patch_tokens;     // image_count x n_patch x d_clip
  std::vector<float> image_encodings;  // image_count x d_enc

  std::vector<double> class_token;      // d_clip
  std::vector<double> pos_table;        // (n_patch + 1) x d_clip
  std::vector<double> text_target;      // d_enc
  std::vector<double> text_nontarget;   // d_enc
  std::vector<double> se_target;        // d_clip
  std::vector<double> se_nontarget;     // d_clip
  std::vector<FrozenLayer> layers;

  std::span<const float> patches(std::size_t image) const;
  std::span<const float> encoding(std::size_t image) const;
  std::size_t tokens() const { return n_patch + 1; }

  // Shapes, finiteness and prompt presence; throws ShapeError / NumericError
  // / FormatError.
  void validate() const;
};

FrozenLayer make_frozen_layer(std::size_t d_clip, std::size_t mlp_hidden);

// "ELIPB1": text header then named float32 sections in declared order.
void save_bundle(const std::filesystem::path& path, const EmbeddingBundle& bundle);
EmbeddingBundle load_bundle(const std::filesystem::path& path);

}  // namespace elip
