#pragma once

#include "outfit/image.hpp"
#include "outfit/region.hpp"
#include "outfit/shape_codec.hpp"
#include "outfit/texture_codec.hpp"

namespace outfit {

/// z = [t; s] from the texture and shape encoders. Throws
/// std::invalid_argument when the codecs disagree on schema or image size.
OutfitCode encode_outfit(const Image& x, const RegionMap& m, const TextureCodec& texture, const ShapeCodec& shape);

struct RenderedEdit {
  Image image;
  RegionMap map;  // G_s output the image was conditioned on
};

/// Decodes z: m = G_s(s), x = G_t(m, broadcast(t, m)). Face and hair pixels of
/// the original (located with the original map) are pasted back over the
/// generated image.
RenderedEdit render_edit(const OutfitCode& z, const TextureCodec& texture, const ShapeCodec& shape,
                         const Image& original, const RegionMap& original_map);

}  // namespace outfit
