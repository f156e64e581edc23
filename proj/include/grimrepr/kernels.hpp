#pragma once

#include <cstddef>
#include <span>

// Dense kernels behind the autodiff primitives and network inference.
//
// Every kernel comes in two flavours: a serial reference and an OpenMP
// version that partitions output rows across threads. Each output element is
// accumulated by a single thread in the same order as the serial loop, so the
// two agree bit for bit and the dispatching entry point may pick either.

namespace grimrepr::kernels {

struct GemmDims {
    std::size_t m = 0; // rows of C
    std::size_t n = 0; // cols of C
    std::size_t k = 0; // inner dimension
    bool trans_a = false; // A stored [k,m] instead of [m,k]
    bool trans_b = false; // B stored [n,k] instead of [k,n]
};

/// C = op(A) op(B), overwriting C.
void gemm_serial(std::span<const double> a, std::span<const double> b, std::span<double> c, const GemmDims& dims);
void gemm_parallel(std::span<const double> a, std::span<const double> b, std::span<double> c, const GemmDims& dims);
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, const GemmDims& dims);

/// out[r,:] = x[r,:] W + bias, W stored [in,out].
void affine_serial(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
                   std::span<double> out, std::size_t rows, std::size_t in, std::size_t out_dim);
void affine_parallel(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
                     std::span<double> out, std::size_t rows, std::size_t in, std::size_t out_dim);
void affine(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
            std::span<double> out, std::size_t rows, std::size_t in, std::size_t out_dim);

/// Work size (m*n*k) above which the dispatchers go parallel, when more than
/// one thread is available and no enclosing parallel region is active.
std::size_t parallel_threshold();
void set_parallel_threshold(std::size_t flops);

} // namespace grimrepr::kernels
