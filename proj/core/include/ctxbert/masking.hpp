#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "ctxbert/corpus.hpp"
#include "ctxbert/model.hpp"
#include "ctxbert/rng.hpp"

namespace ctxbert::training {

struct MaskedExample {
  model::MaskedSequence sequence;  // ids with kMaskId at the masked position
  data::ArticleId target = 0;      // vocabulary id that was masked out
  std::vector<std::size_t> context;
};

// Masks one uniformly chosen position with kMaskId. No random-token or
// keep-original corruption: training inputs look exactly like evaluation
// inputs. Outfits shorter than two articles yield nullopt.
std::optional<MaskedExample> mask_outfit(const data::Outfit& outfit, Rng& rng);

MaskedExample mask_at(const data::Outfit& outfit, std::size_t position);

// Every (outfit, position) pair, in corpus order.
std::vector<MaskedExample> mask_exhaustively(std::span<const data::Outfit> outfits);

}  // namespace ctxbert::training
