#include "ctxbert/masking.hpp"

#include <iostream>

namespace ctxbert::training {

MaskedExample mask_at(const data::Outfit& outfit, std::size_t position) {
  if (position >= outfit.items.size()) throw UsageError("mask_at: position out of range");
  MaskedExample example;
  example.sequence.ids = outfit.items;
  example.sequence.masked_position = position;
  example.target = outfit.items[position];
  example.sequence.ids[position] = model::kMaskId;
  example.context = outfit.context;
  return example;
}

std::optional<MaskedExample> mask_outfit(const data::Outfit& outfit, Rng& rng) {
  if (outfit.items.size() < 2) {
    std::cerr << "warning: skipping outfit with " << outfit.items.size() << " article(s)\n";
    return std::nullopt;
  }
  return mask_at(outfit, rng.uniform_int(outfit.items.size()));
}

std::vector<MaskedExample> mask_exhaustively(std::span<const data::Outfit> outfits) {
  std::vector<MaskedExample> examples;
  for (const auto& outfit : outfits)
    for (std::size_t i = 0; i < outfit.items.size(); ++i) examples.push_back(mask_at(outfit, i));
  return examples;
}

}  // namespace ctxbert::training
