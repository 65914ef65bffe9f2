#include "caspgrid/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace caspgrid {

template <typename T>
void adamw_step(ParamStore<T>& params, const AdamWConfig& cfg, int64_t step_index) {
  if (step_index < 1)
    throw_error(ErrorKind::Config, "adamw_step: step_index is 1-based");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_index));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_index));
  for (auto& e : params.entries()) {
    if (!e.trainable) continue;
    const int64_t n = e.value.numel();
    for (int64_t i = 0; i < n; ++i) {
      const double gi = static_cast<double>(e.grad[i]);
      if (!std::isfinite(gi))
        throw_error(ErrorKind::Numerical,
                    "non-finite gradient in parameter " + e.name);
      const double m = cfg.beta1 * e.moment1[i] + (1.0 - cfg.beta1) * gi;
      const double v = cfg.beta2 * e.moment2[i] + (1.0 - cfg.beta2) * gi * gi;
      e.moment1[i] = static_cast<T>(m);
      e.moment2[i] = static_cast<T>(v);
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      const double p = static_cast<double>(e.value[i]);
      e.value[i] = static_cast<T>(p - cfg.lr * cfg.weight_decay * p -
                                  cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
      e.grad[i] = T(0);
    }
  }
}

namespace {

constexpr char kMagic[8] = {'C', 'G', 'C', 'K', 'P', 'T', '0', '1'};

template <typename V>
void write_pod(std::ostream& os, const V& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::istream& is) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw_error(ErrorKind::Data, "checkpoint: truncated file");
  return v;
}

template <typename T>
void write_payload(std::ostream& os, const Tensor<T>& t) {
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.numel() * sizeof(T)));
}

template <typename T>
void read_payload(std::istream& is, Tensor<T>& t) {
  is.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.numel() * sizeof(T)));
  if (!is) throw_error(ErrorKind::Data, "checkpoint: truncated payload");
}

template <typename T>
constexpr uint32_t dtype_code() {
  return sizeof(T) == 4 ? 1u : 2u;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::string& path, const ParamStore<T>& params,
                     const CheckpointMeta& meta) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw_error(ErrorKind::Io, "cannot write checkpoint: " + path);
  os.write(kMagic, sizeof(kMagic));
  write_pod(os, meta.train_step);
  write_pod(os, meta.adam_step);
  write_pod(os, static_cast<uint32_t>(params.entries().size()));
  for (const auto& e : params.entries()) {
    write_pod(os, static_cast<uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    write_pod(os, static_cast<uint8_t>(e.trainable ? 1 : 0));
    write_pod(os, dtype_code<T>());
    write_pod(os, static_cast<uint32_t>(e.value.rank()));
    for (int64_t d : e.value.dims()) write_pod(os, static_cast<uint64_t>(d));
    write_payload(os, e.value);
    if (e.trainable) {
      write_payload(os, e.moment1);
      write_payload(os, e.moment2);
    }
  }
  if (!os) throw_error(ErrorKind::Io, "checkpoint write failed: " + path);
}

template <typename T>
CheckpointMeta load_checkpoint(const std::string& path, ParamStore<T>& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw_error(ErrorKind::Io, "cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw_error(ErrorKind::Data, "checkpoint: bad magic / unsupported version");
  CheckpointMeta meta;
  meta.train_step = read_pod<uint64_t>(is);
  meta.adam_step = read_pod<uint64_t>(is);
  const uint32_t count = read_pod<uint32_t>(is);
  if (count != params.entries().size())
    throw_error(ErrorKind::Config,
                "checkpoint does not match model: entry count " +
                    std::to_string(count) + " vs " +
                    std::to_string(params.entries().size()));
  for (auto& e : params.entries()) {
    const uint32_t name_len = read_pod<uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw_error(ErrorKind::Data, "checkpoint: truncated name");
    if (name != e.name)
      throw_error(ErrorKind::Config,
                  "checkpoint does not match model: parameter " + name +
                      " where " + e.name + " was expected");
    const uint8_t trainable = read_pod<uint8_t>(is);
    if ((trainable != 0) != e.trainable)
      throw_error(ErrorKind::Config, "checkpoint trainable flag mismatch: " + name);
    if (read_pod<uint32_t>(is) != dtype_code<T>())
      throw_error(ErrorKind::Config, "checkpoint dtype mismatch: " + name);
    const uint32_t rank = read_pod<uint32_t>(is);
    std::vector<int64_t> dims(rank);
    for (auto& d : dims) d = static_cast<int64_t>(read_pod<uint64_t>(is));
    if (dims != e.value.dims())
      throw_error(ErrorKind::Config, "checkpoint shape mismatch: " + name);
    read_payload(is, e.value);
    if (e.trainable) {
      read_payload(is, e.moment1);
      read_payload(is, e.moment2);
    }
  }
  return meta;
}

template <typename T>
void init_fan_in_uniform(Tensor<T>& w, std::mt19937& rng) {
  int64_t fan_in = 1;
  for (size_t i = 0; i + 1 < w.rank(); ++i) fan_in *= w.dim(i);
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<int64_t>(fan_in, 1)));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(u(rng));
}

#define CASPGRID_INSTANTIATE(T)                                                     \
  template void adamw_step(ParamStore<T>&, const AdamWConfig&, int64_t);            \
  template void save_checkpoint(const std::string&, const ParamStore<T>&,           \
                                const CheckpointMeta&);                             \
  template CheckpointMeta load_checkpoint(const std::string&, ParamStore<T>&);      \
  template void init_fan_in_uniform(Tensor<T>&, std::mt19937&);

CASPGRID_INSTANTIATE(float)
CASPGRID_INSTANTIATE(double)
#undef CASPGRID_INSTANTIATE

}  // namespace caspgrid
