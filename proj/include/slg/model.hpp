#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "slg/backbone.hpp"
#include "slg/config.hpp"
#include "slg/data.hpp"
#include "slg/ff_adapter.hpp"
#include "slg/lgm.hpp"
#include "slg/structure_encoder.hpp"

namespace slg {

struct Batch {
  Tensor image;    // [N,4,S,S], visible then thermal, pixel-level concat
  Tensor visible;  // [N,3,S,S]
  Tensor thermal;  // [N,1,S,S]
  Tensor target;   // [N,T]
  std::vector<StructuredCaption> captions;
  std::vector<std::string> ids;
};

Batch make_batch(const std::vector<SyntheticSample>& samples, const std::vector<int>& indices,
                 const std::vector<StructuredCaption>* caption_override = nullptr);

// The assembled system: frozen backbone plus whichever adaptation streams the
// mode enables. Baseline is pixel-concat input with trainable patch embedding
// and head only; Full is the complete architecture with nothing frozen.
class SlgModel {
 public:
  static SlgModel build(const RunConfig& cfg, std::uint64_t adapter_seed);

  const RunConfig& config() const { return cfg_; }
  Mode mode() const { return cfg_.mode; }
  bool use_sa() const { return cfg_.mode != Mode::Baseline; }
  bool use_lgm() const { return cfg_.mode != Mode::Baseline && cfg_.mode != Mode::Sa; }

  Tensor forward(const Batch& batch) const;  // logits [N, T]
  Tensor loss(const Tensor& logits, const Tensor& target) const;

  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  const Backbone& backbone() const { return backbone_; }
  const StructureEncoder& encoder() const { return *encoder_; }
  const FfAdapter& ff_adapter() const { return *ff_; }
  const Lgm& lgm() const { return *lgm_; }
  const TextEmbedder& embedder() const { return *embedder_; }
  void set_embedder(std::shared_ptr<TextEmbedder> e) { embedder_ = std::move(e); }

  // Restores parameter values by name; shapes must match exactly.
  void load_state(const std::map<std::string, std::vector<real>>& state);

 private:
  RunConfig cfg_;
  Backbone backbone_;
  std::optional<StructureEncoder> encoder_;
  std::optional<FfAdapter> ff_;
  std::optional<Lgm> lgm_;
  std::shared_ptr<TextEmbedder> embedder_;
  Tensor head_w_, head_b_;
  ParamSet params_;
};

}  // namespace slg
