#include "exmap/checkpoint.hpp"

#include <string>

#include "bytes.hpp"
#include "exmap/error.hpp"
#include "exmap/idx.hpp"

namespace exmap::nn {
namespace {

constexpr std::size_t kMaxDim = std::size_t{1} << 32;

void put_tensor(detail::ByteWriter& w, const Tensor& t) {
  for (double v : t.data()) w.f64(v);
}

Tensor get_tensor(detail::ByteReader& r, Shape shape) {
  const std::size_t n = shape_numel(shape);
  r.need(n * 8);
  std::vector<double> values(n);
  for (auto& v : values) v = r.f64();
  return Tensor(std::move(shape), std::move(values));
}

std::size_t get_dim(detail::ByteReader& r) {
  const std::uint64_t d = r.u64();
  if (d == 0 || d > kMaxDim) throw Error(ErrorKind::kFormat, "EXNN: implausible dimension " + std::to_string(d));
  return static_cast<std::size_t>(d);
}

}  // namespace

std::vector<std::uint8_t> encode_network(const Network& net) {
  detail::ByteWriter w;
  w.raw("EXNN");
  w.u16(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(net.input_shape().size()));
  for (std::size_t d : net.input_shape()) w.u64(d);
  w.u32(static_cast<std::uint32_t>(net.num_layers()));
  for (const auto& layer : net.layers()) {
    w.u8(static_cast<std::uint8_t>(kind_of(layer)));
    if (const auto* d = std::get_if<Dense>(&layer)) {
      w.u64(d->weight.dim(0));
      w.u64(d->weight.dim(1));
      put_tensor(w, d->weight);
      put_tensor(w, d->bias);
    } else if (const auto* c = std::get_if<Conv2d>(&layer)) {
      for (std::size_t a = 0; a < 4; ++a) w.u64(c->kernel.dim(a));
      w.u64(c->stride);
      put_tensor(w, c->kernel);
      put_tensor(w, c->bias);
    } else if (const auto* p = std::get_if<AvgPool>(&layer)) {
      w.u64(p->window);
    }
  }
  return w.take();
}

Network decode_network(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes, "EXNN checkpoint");
  if (bytes.size() < 4 || r.raw(4) != "EXNN") throw Error(ErrorKind::kFormat, "not an EXNN checkpoint (bad magic)");
  const auto version = r.u16();
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::kFormat, "unsupported EXNN version " + std::to_string(version));
  }
  const std::uint32_t rank = r.u32();
  if (rank == 0 || rank > 8) throw Error(ErrorKind::kFormat, "EXNN: bad input rank");
  Shape input;
  for (std::uint32_t i = 0; i < rank; ++i) input.push_back(get_dim(r));
  const std::uint32_t count = r.u32();
  if (count == 0 || count > 4096) throw Error(ErrorKind::kFormat, "EXNN: bad layer count");
  std::vector<Layer> layers;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto tag = static_cast<LayerKind>(r.u8());
    switch (tag) {
      case LayerKind::kDense: {
        const std::size_t in = get_dim(r), out = get_dim(r);
        Tensor w = get_tensor(r, {in, out});
        Tensor b = get_tensor(r, {out});
        layers.emplace_back(Dense{std::move(w), std::move(b)});
        break;
      }
      case LayerKind::kConv2d: {
        Shape ks;
        for (int a = 0; a < 4; ++a) ks.push_back(get_dim(r));
        const std::size_t stride = get_dim(r);
        const std::size_t oc = ks[0];
        Tensor k = get_tensor(r, ks);
        Tensor b = get_tensor(r, {oc});
        layers.emplace_back(Conv2d{std::move(k), std::move(b), stride});
        break;
      }
      case LayerKind::kReLU: layers.emplace_back(ReLU{}); break;
      case LayerKind::kAvgPool: layers.emplace_back(AvgPool{get_dim(r)}); break;
      case LayerKind::kFlatten: layers.emplace_back(Flatten{}); break;
      default:
        throw Error(ErrorKind::kFormat, "EXNN: unknown layer tag " + std::to_string(static_cast<int>(tag)) +
                                            " at layer " + std::to_string(i));
    }
  }
  if (!r.done()) throw Error(ErrorKind::kFormat, "EXNN: trailing bytes");
  return Network(std::move(input), std::move(layers));
}

void save_network(const std::filesystem::path& path, const Network& net) {
  io::write_bytes(path, encode_network(net));
}

Network load_network(const std::filesystem::path& path) { return decode_network(io::read_bytes(path)); }

}  // namespace exmap::nn
