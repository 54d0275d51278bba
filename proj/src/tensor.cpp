#include "aerosense/tensor.hpp"

namespace aero {

double pairwise_sum(std::span<const double> xs) {
    const size_t n = xs.size();
    if (n == 0) return 0.0;
    if (n == 1) return xs[0];
    if (n == 2) return xs[0] + xs[1];
    const size_t mid = n / 2;
    return pairwise_sum(xs.first(mid)) + pairwise_sum(xs.subspan(mid));
}

} // namespace aero
