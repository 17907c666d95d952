// Times the parallel metric kernels against the serial reference on random
// point sets and prints one row per problem size. The two paths must agree
// exactly; the benchmark asserts that while it measures.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "diagen/metrics.hpp"
#include "diagen/rng.hpp"

namespace {

std::vector<double> random_points(std::size_t p, std::size_t dim, diagen::Rng& rng) {
    std::vector<double> out(p * dim);
    for (double& v : out) v = 4.0 * rng.uniform01() - 2.0;
    return out;
}

template <typename F>
double time_ms(F&& fn, int repeats) {
    const auto start = std::chrono::steady_clock::now();
    for (int r = 0; r < repeats; ++r) fn();
    const auto stop = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(stop - start).count() / repeats;
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("threads: %d\n", omp_get_max_threads());
#else
    std::printf("threads: 1 (built without OpenMP)\n");
#endif
    std::printf("%8s %5s %4s | %12s %12s %8s | %12s %12s %8s\n", "points", "dim", "k",
                "radii ser", "radii par", "speedup", "p/r ser", "p/r par", "speedup");

    diagen::Rng rng(20240817);
    const int k = 5;
    for (const std::size_t p : {64u, 256u, 1024u, 2048u}) {
        const std::size_t dim = 16;
        const std::vector<double> real = random_points(p, dim, rng);
        const std::vector<double> syn = random_points(p, dim, rng);
        const int repeats = p <= 256 ? 20 : 3;

        const auto serial_model = diagen::serial::build_manifold(real, dim, k);
        const auto parallel_model = diagen::build_manifold(real, dim, k);
        if (serial_model.radii_sq != parallel_model.radii_sq) {
            std::fprintf(stderr, "radii mismatch at p=%zu\n", p);
            return 1;
        }
        const double ps = diagen::serial::precision_metric(real, syn, dim, k);
        const double pp = diagen::precision_metric(real, syn, dim, k);
        const double rs = diagen::serial::recall_metric(real, syn, dim, k);
        const double rp = diagen::recall_metric(real, syn, dim, k);
        if (ps != pp || rs != rp) {
            std::fprintf(stderr, "metric mismatch at p=%zu\n", p);
            return 1;
        }

        const double t_radii_ser =
            time_ms([&] { (void)diagen::serial::build_manifold(real, dim, k); }, repeats);
        const double t_radii_par =
            time_ms([&] { (void)diagen::build_manifold(real, dim, k); }, repeats);
        const double t_pr_ser = time_ms(
            [&] {
                (void)diagen::serial::precision_metric(real, syn, dim, k);
                (void)diagen::serial::recall_metric(real, syn, dim, k);
            },
            repeats);
        const double t_pr_par = time_ms(
            [&] {
                (void)diagen::precision_metric(real, syn, dim, k);
                (void)diagen::recall_metric(real, syn, dim, k);
            },
            repeats);

        std::printf("%8zu %5zu %4d | %10.2fms %10.2fms %7.2fx | %10.2fms %10.2fms %7.2fx\n", p,
                    dim, k, t_radii_ser, t_radii_par, t_radii_ser / t_radii_par, t_pr_ser,
                    t_pr_par, t_pr_ser / t_pr_par);
    }
    return 0;
}
