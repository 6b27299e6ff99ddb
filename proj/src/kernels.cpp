#include "xladj/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <stdexcept>

#include "kernels_impl.hpp"

namespace xladj::kernels {

namespace {

struct Tables {
  Ops<float> f32;
  Ops<double> f64;
  Backend backend;
};

bool cpu_has_avx2() {
#if XLADJ_HAVE_AVX2
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Tables make_tables(Backend b) {
  Tables t;
  t.backend = b;
#if XLADJ_HAVE_AVX2
  if (b == Backend::Avx2) {
    t.f32 = avx2::make_ops_f32();
    t.f64 = avx2::make_ops_f64();
    return t;
  }
#endif
  t.f32 = scalar::make_ops<float>();
  t.f64 = scalar::make_ops<double>();
  return t;
}

Backend startup_backend() {
  if (const char* env = std::getenv("XLADJ_KERNELS")) {
    if (std::strcmp(env, "scalar") == 0) return Backend::Scalar;
    if (std::strcmp(env, "avx2") == 0 && cpu_has_avx2()) return Backend::Avx2;
  }
  return cpu_has_avx2() ? Backend::Avx2 : Backend::Scalar;
}

Tables& tables() {
  static Tables t = make_tables(startup_backend());
  return t;
}

}  // namespace

const char* backend_name(Backend b) {
  return b == Backend::Avx2 ? "avx2" : "scalar";
}

bool backend_supported(Backend b) {
  return b == Backend::Scalar || (b == Backend::Avx2 && cpu_has_avx2());
}

Backend active_backend() { return tables().backend; }

void set_backend(Backend b) {
  if (!backend_supported(b)) {
    throw std::runtime_error(std::string("kernel backend not supported on this CPU: ") +
                             backend_name(b));
  }
  tables() = make_tables(b);
}

const Ops<float>& ops_f32() { return tables().f32; }
const Ops<double>& ops_f64() { return tables().f64; }

}  // namespace xladj::kernels
