#include <cstdlib>
#include <string_view>

#include "tigm/kernels.hpp"

namespace tigm::kernels {

#ifndef TIGM_HAVE_AVX2
const KernelTable* avx2_kernels() { return nullptr; }
#endif

bool avx2_available() {
#if defined(TIGM_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
    static const bool ok = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    return ok;
#else
    return false;
#endif
}

const KernelTable& active() {
    static const KernelTable* chosen = [] {
        const char* env = std::getenv("TIGM_KERNELS");
        if (env && std::string_view(env) == "scalar") return &scalar_kernels();
        if (avx2_available()) return avx2_kernels();
        return &scalar_kernels();
    }();
    return *chosen;
}

}  // namespace tigm::kernels
