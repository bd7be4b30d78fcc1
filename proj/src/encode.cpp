#include "outfit/encode.hpp"

#include <stdexcept>

namespace outfit {

OutfitCode encode_outfit(const Image& x, const RegionMap& m, const TextureCodec& texture, const ShapeCodec& shape) {
  if (!(texture.schema() == shape.schema())) throw std::invalid_argument("texture and shape codecs use different schemas");
  if (texture.height() != shape.height() || texture.width() != shape.width())
    throw std::invalid_argument("texture and shape codecs expect different image sizes");
  return OutfitCode(texture.encode(x, m), shape.encode(m));
}

RenderedEdit render_edit(const OutfitCode& z, const TextureCodec& texture, const ShapeCodec& shape,
                         const Image& original, const RegionMap& original_map) {
  if (!(texture.schema() == shape.schema())) throw std::invalid_argument("texture and shape codecs use different schemas");
  if (original.height() != original_map.height() || original.width() != original_map.width())
    throw std::invalid_argument("original image and map sizes differ");
  if (original.height() != shape.height() || original.width() != shape.width())
    throw std::invalid_argument("original image size does not match the codecs");
  RenderedEdit out;
  out.map = shape.generate(z.shape);
  out.image = texture.generate(out.map, z.texture);
  for (int y = 0; y < original.height(); ++y)
    for (int x = 0; x < original.width(); ++x) {
      const int l = original_map.at(y, x);
      if (l == labels::face || l == labels::hair) out.image.set(y, x, original.at(y, x));
    }
  return out;
}

}  // namespace outfit
