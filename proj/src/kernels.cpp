#include "grimrepr/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <stdexcept>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace grimrepr::kernels {

namespace {

std::atomic<std::size_t> g_threshold{std::size_t{1} << 18};

void check_sizes(std::span<const double> a, std::span<const double> b, std::span<double> c, const GemmDims& d)
{
    if (a.size() < d.m * d.k || b.size() < d.k * d.n || c.size() < d.m * d.n)
        throw std::invalid_argument("gemm: buffer smaller than dimensions");
}

// B^T is materialised once so every row kernel streams contiguous memory.
std::vector<double> transpose(std::span<const double> src, std::size_t rows, std::size_t cols)
{
    std::vector<double> dst(rows * cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
    return dst;
}

constexpr std::size_t kRows = 4;
constexpr std::size_t kCols = 8;

// Rows [i0, i0 + rows) of C = A B with A addressed as a[i * sr + p * sc] and
// B [k,n] row-major. Each entry is accumulated over p in increasing order
// starting from zero, whatever the blocking, so every partition of the rows
// yields the same bits.
void gemm_block(const double* a, std::size_t sr, std::size_t sc, const double* b, double* c, std::size_t i0,
                std::size_t rows, std::size_t n, std::size_t k)
{
    for (std::size_t j0 = 0; j0 < n; j0 += kCols) {
        const std::size_t nj = std::min(kCols, n - j0);
        double acc[kRows][kCols] = {};
        if (rows == kRows && nj == kCols) {
            for (std::size_t p = 0; p < k; ++p) {
                const double* bp = b + p * n + j0;
                double av[kRows];
                for (std::size_t r = 0; r < kRows; ++r) av[r] = a[(i0 + r) * sr + p * sc];
                for (std::size_t r = 0; r < kRows; ++r)
                    for (std::size_t j = 0; j < kCols; ++j) acc[r][j] += av[r] * bp[j];
            }
        } else {
            for (std::size_t p = 0; p < k; ++p) {
                const double* bp = b + p * n + j0;
                for (std::size_t r = 0; r < rows; ++r) {
                    const double ar = a[(i0 + r) * sr + p * sc];
                    for (std::size_t j = 0; j < nj; ++j) acc[r][j] += ar * bp[j];
                }
            }
        }
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < nj; ++j) c[(i0 + r) * n + j0 + j] = acc[r][j];
    }
}

std::size_t row_blocks(std::size_t m) { return (m + kRows - 1) / kRows; }

void gemm_rows(const double* a, const double* bp, double* c, std::size_t block, const GemmDims& d)
{
    const std::size_t i0 = block * kRows;
    const std::size_t sr = d.trans_a ? 1 : d.k;
    const std::size_t sc = d.trans_a ? d.m : 1;
    gemm_block(a, sr, sc, bp, c, i0, std::min(kRows, d.m - i0), d.n, d.k);
}

void affine_rows(const double* x, const double* w, const double* bias, double* out, std::size_t block,
                 std::size_t rows, std::size_t in, std::size_t out_dim)
{
    const std::size_t i0 = block * kRows;
    const std::size_t nr = std::min(kRows, rows - i0);
    gemm_block(x, in, 1, w, out, i0, nr, out_dim, in);
    for (std::size_t r = 0; r < nr; ++r)
        for (std::size_t j = 0; j < out_dim; ++j) out[(i0 + r) * out_dim + j] += bias[j];
}

bool go_parallel(std::size_t work)
{
#ifdef _OPENMP
    return work >= g_threshold.load(std::memory_order_relaxed) && omp_get_max_threads() > 1 && !omp_in_parallel();
#else
    (void)work;
    return false;
#endif
}

} // namespace

void gemm_serial(std::span<const double> a, std::span<const double> b, std::span<double> c, const GemmDims& dims)
{
    check_sizes(a, b, c, dims);
    std::vector<double> bt;
    const double* bp = b.data();
    if (dims.trans_b) {
        bt = transpose(b, dims.n, dims.k);
        bp = bt.data();
    }
    for (std::size_t blk = 0; blk < row_blocks(dims.m); ++blk) gemm_rows(a.data(), bp, c.data(), blk, dims);
}

void gemm_parallel(std::span<const double> a, std::span<const double> b, std::span<double> c, const GemmDims& dims)
{
    check_sizes(a, b, c, dims);
    std::vector<double> bt;
    const double* bp = b.data();
    if (dims.trans_b) {
        bt = transpose(b, dims.n, dims.k);
        bp = bt.data();
    }
    const auto blocks = static_cast<long long>(row_blocks(dims.m));
#pragma omp parallel for schedule(static)
    for (long long blk = 0; blk < blocks; ++blk)
        gemm_rows(a.data(), bp, c.data(), static_cast<std::size_t>(blk), dims);
}

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, const GemmDims& dims)
{
    if (go_parallel(dims.m * dims.n * dims.k))
        gemm_parallel(a, b, c, dims);
    else
        gemm_serial(a, b, c, dims);
}

void affine_serial(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
                   std::span<double> out, std::size_t rows, std::size_t in, std::size_t out_dim)
{
    for (std::size_t blk = 0; blk < row_blocks(rows); ++blk)
        affine_rows(x.data(), w.data(), bias.data(), out.data(), blk, rows, in, out_dim);
}

void affine_parallel(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
                     std::span<double> out, std::size_t rows, std::size_t in, std::size_t out_dim)
{
    const auto blocks = static_cast<long long>(row_blocks(rows));
#pragma omp parallel for schedule(static)
    for (long long blk = 0; blk < blocks; ++blk)
        affine_rows(x.data(), w.data(), bias.data(), out.data(), static_cast<std::size_t>(blk), rows, in, out_dim);
}

void affine(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
            std::span<double> out, std::size_t rows, std::size_t in, std::size_t out_dim)
{
    if (x.size() < rows * in || w.size() < in * out_dim || bias.size() < out_dim || out.size() < rows * out_dim)
        throw std::invalid_argument("affine: buffer smaller than dimensions");
    if (go_parallel(rows * in * out_dim))
        affine_parallel(x, w, bias, out, rows, in, out_dim);
    else
        affine_serial(x, w, bias, out, rows, in, out_dim);
}

std::size_t parallel_threshold() { return g_threshold.load(); }
void set_parallel_threshold(std::size_t flops) { g_threshold.store(flops); }

} // namespace grimrepr::kernels
