#include "sparsind/tensor_file.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <set>

namespace sparsind {

namespace {

constexpr char kMagic[4] = {'S', 'I', 'F', '1'};
constexpr std::uint8_t kDtypeF32 = 0;
constexpr const char* kInputScale = "__input.scale";
constexpr const char* kInputShift = "__input.shift";

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

float narrow(double v, const std::string& name) {
  if (!std::isfinite(v) || std::abs(v) > std::numeric_limits<float>::max()) {
    throw DomainError("tensor '" + name + "': value " + std::to_string(v) +
                      " is not representable as f32");
  }
  return static_cast<float>(v);
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint64_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw FormatError(std::string("truncated ") + what + ": need " + std::to_string(n) +
                            " bytes, have " + std::to_string(remaining()),
                        pos_);
    }
  }

  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

FormatError::FormatError(const std::string& what, std::uint64_t offset)
    : std::runtime_error("format error at byte " + std::to_string(offset) + ": " + what),
      offset_(offset),
      message_(what) {}

NamedTensor NamedTensor::from_matrix(std::string name, const Matrix& m) {
  return {std::move(name),
          {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())},
          m.raw()};
}

NamedTensor NamedTensor::from_vector(std::string name, const Vector& v) {
  return {std::move(name), {static_cast<std::uint32_t>(v.size())}, v.raw()};
}

std::size_t NamedTensor::element_count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

Matrix NamedTensor::to_matrix() const {
  if (dims.size() != 2) {
    throw ShapeError("tensor '" + name + "' has " + std::to_string(dims.size()) +
                     " dims, expected 2");
  }
  return Matrix(dims[0], dims[1], data);
}

Vector NamedTensor::to_vector() const {
  if (dims.size() != 1) {
    throw ShapeError("tensor '" + name + "' has " + std::to_string(dims.size()) +
                     " dims, expected 1");
  }
  return Vector(data);
}

std::vector<std::uint8_t> encode_tensors(std::span<const NamedTensor> tensors) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  std::set<std::string> names;
  for (const auto& t : tensors) {
    if (t.name.empty()) throw DomainError("tensor with empty name");
    if (!names.insert(t.name).second) throw DomainError("duplicate tensor name '" + t.name + "'");
    if (t.dims.size() > 255) throw DomainError("tensor '" + t.name + "' has too many dims");
    if (t.data.size() != t.element_count()) {
      throw ShapeError("tensor '" + t.name + "': data length " + std::to_string(t.data.size()) +
                       " does not match dims");
    }
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    out.push_back(kDtypeF32);
    out.push_back(static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) put_u32(out, d);
    for (double v : t.data) put_u32(out, std::bit_cast<std::uint32_t>(narrow(v, t.name)));
  }
  return out;
}

std::vector<NamedTensor> decode_tensors(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("bad magic", 0);
  const std::uint32_t count = r.u32("tensor count");

  std::vector<NamedTensor> tensors;
  std::set<std::string> names;
  for (std::uint32_t e = 0; e < count; ++e) {
    NamedTensor t;
    const std::uint32_t name_len = r.u32("name length");
    const std::uint64_t name_at = r.offset();
    if (name_len == 0) throw FormatError("empty tensor name", name_at);
    auto name = r.take(name_len, "name");
    t.name.assign(name.begin(), name.end());
    if (!names.insert(t.name).second) {
      throw FormatError("duplicate tensor name '" + t.name + "'", name_at);
    }
    const std::uint64_t dtype_at = r.offset();
    const std::uint8_t dtype = r.u8("dtype");
    if (dtype != kDtypeF32) {
      throw FormatError("unsupported dtype " + std::to_string(dtype), dtype_at);
    }
    const std::uint8_t ndim = r.u8("ndim");
    std::uint64_t count_elems = 1;
    for (std::uint8_t d = 0; d < ndim; ++d) {
      t.dims.push_back(r.u32("dims"));
      // Saturate; anything this large is truncated anyway.
      const std::uint64_t dim = t.dims.back();
      if (dim != 0 && count_elems > (std::uint64_t{1} << 62) / dim) {
        count_elems = std::uint64_t{1} << 62;
      } else {
        count_elems *= dim;
      }
    }
    const std::uint64_t payload_at = r.offset();
    if (count_elems > r.remaining() / 4) {
      throw FormatError("truncated payload for '" + t.name + "': need " +
                            std::to_string(count_elems * 4) + " bytes, have " +
                            std::to_string(r.remaining()),
                        payload_at);
    }
    auto payload = r.take(count_elems * 4, "payload");
    t.data.resize(count_elems);
    for (std::uint64_t i = 0; i < count_elems; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(payload[4 * i + b]) << (8 * b);
      const float f = std::bit_cast<float>(bits);
      if (!std::isfinite(f)) {
        throw FormatError("non-finite value in '" + t.name + "'", payload_at + 4 * i);
      }
      t.data[i] = static_cast<double>(f);
    }
    tensors.push_back(std::move(t));
  }
  if (r.remaining() != 0) {
    throw FormatError(std::to_string(r.remaining()) + " trailing bytes", r.offset());
  }
  return tensors;
}

void save_tensors(const std::filesystem::path& path, std::span<const NamedTensor> tensors) {
  const auto bytes = encode_tensors(tensors);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

std::vector<NamedTensor> load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_tensors(bytes);
}

std::vector<NamedTensor> model_to_tensors(const Model& model) {
  std::vector<NamedTensor> out;
  if (const auto& t = model.input_transform()) {
    out.push_back(NamedTensor::from_vector(kInputScale, t->scale));
    out.push_back(NamedTensor::from_vector(kInputShift, t->shift));
  }
  for (const auto& name : model.topology()) {
    const Layer& l = model.layer(name);
    if (l.is_linear()) {
      out.push_back(NamedTensor::from_matrix(name + ".weight", l.linear().weight));
      if (l.linear().bias) out.push_back(NamedTensor::from_vector(name + ".bias", *l.linear().bias));
    } else {
      out.push_back(NamedTensor::from_matrix(name + ".wq", l.attention().wq));
      out.push_back(NamedTensor::from_matrix(name + ".wk", l.attention().wk));
    }
  }
  return out;
}

Model model_from_tensors(std::span<const NamedTensor> tensors) {
  struct Parts {
    const NamedTensor* weight = nullptr;
    const NamedTensor* bias = nullptr;
    const NamedTensor* wq = nullptr;
    const NamedTensor* wk = nullptr;
  };
  std::vector<std::string> order;
  std::map<std::string, Parts> parts;
  const NamedTensor* in_scale = nullptr;
  const NamedTensor* in_shift = nullptr;

  for (const auto& t : tensors) {
    if (t.name == kInputScale) {
      in_scale = &t;
      continue;
    }
    if (t.name == kInputShift) {
      in_shift = &t;
      continue;
    }
    const auto dot = t.name.rfind('.');
    if (dot == std::string::npos || dot == 0) {
      throw ModelError("tensor '" + t.name + "' is not a model tensor (expected <layer>.<part>)");
    }
    const std::string layer = t.name.substr(0, dot);
    const std::string part = t.name.substr(dot + 1);
    if (!parts.count(layer)) order.push_back(layer);
    Parts& p = parts[layer];
    if (part == "weight") {
      p.weight = &t;
    } else if (part == "bias") {
      p.bias = &t;
    } else if (part == "wq") {
      p.wq = &t;
    } else if (part == "wk") {
      p.wk = &t;
    } else {
      throw ModelError("tensor '" + t.name + "' has unknown part '" + part + "'");
    }
  }

  std::vector<Layer> layers;
  for (const auto& name : order) {
    const Parts& p = parts.at(name);
    if (p.weight && !p.wq && !p.wk) {
      Linear lin{p.weight->to_matrix(), std::nullopt};
      if (p.bias) lin.bias = p.bias->to_vector();
      layers.push_back({name, std::move(lin)});
    } else if (p.wq && p.wk && !p.weight && !p.bias) {
      layers.push_back({name, AttentionQK{p.wq->to_matrix(), p.wk->to_matrix()}});
    } else {
      throw ModelError("layer '" + name +
                       "' must have either .weight[/.bias] or both .wq and .wk");
    }
  }
  Model model(std::move(layers));
  if (in_scale || in_shift) {
    if (!in_scale || !in_shift) throw ModelError("input transform needs both scale and shift");
    model.set_input_transform(InputTransform{in_scale->to_vector(), in_shift->to_vector()});
  }
  return model;
}

void save_model(const std::filesystem::path& path, const Model& model) {
  save_tensors(path, model_to_tensors(model));
}

Model load_model(const std::filesystem::path& path) { return model_from_tensors(load_tensors(path)); }

Model quantize_to_f32(const Model& model) {
  const auto bytes = encode_tensors(model_to_tensors(model));
  return model_from_tensors(decode_tensors(bytes));
}

}  // namespace sparsind
