#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

namespace msscanet {

using Shape = std::vector<int64_t>;

int64_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense row-major 64-bit tensor with an optional gradient buffer and the
// tape hooks reverse-mode differentiation needs. Ops record themselves only
// when an input requires grad; a result then keeps strong references to its
// inputs, so holding a loss value keeps its whole graph alive. Tape
// recording and backward are single-threaded per graph.
struct Tensor : std::enable_shared_from_this<Tensor> {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // sized lazily on first accumulation

    const char* op = "";
    std::vector<TensorPtr> inputs;
    std::function<void()> backward_fn;

    Tensor(Shape s, std::vector<double> d, bool rg);

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    int64_t rank() const { return static_cast<int64_t>(shape.size()); }
    double item() const;

    void zero_grad();
    void accumulate_grad(const double* g, int64_t n);
};

TensorPtr tensor(Shape shape, std::vector<double> data, bool requires_grad = false);
TensorPtr zeros(Shape shape, bool requires_grad = false);
TensorPtr full(Shape shape, double value, bool requires_grad = false);
TensorPtr scalar(double value, bool requires_grad = false);

bool all_finite(const Tensor& t);

// ---------------------------------------------------------------------------
// Instrumentation hooks.
//
// MAC accounting: matmul, pointwise_conv and channel_scale report their
// multiply-accumulate counts into the active sink. Null sink = no counting.
// Kink watch: relu and abs_val record the smallest |x| they see so callers
// can confirm a finite-difference probe point is a safe distance from the
// nearest non-smooth point.
// ---------------------------------------------------------------------------

int64_t* set_mac_sink(int64_t* sink);  // returns the previous sink

struct MacScope {
    explicit MacScope(int64_t* sink) : prev_(set_mac_sink(sink)) {}
    ~MacScope() { set_mac_sink(prev_); }
    MacScope(const MacScope&) = delete;
    MacScope& operator=(const MacScope&) = delete;

  private:
    int64_t* prev_;
};

struct KinkWatch {
    double min_margin = std::numeric_limits<double>::infinity();
};

KinkWatch* set_kink_watch(KinkWatch* w);  // returns the previous watch

// ---------------------------------------------------------------------------
// Operations. All validate shapes and throw ShapeError naming the offending
// extents. Results are finite for finite inputs within documented domains.
// ---------------------------------------------------------------------------

TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(const TensorPtr& a, double c);
TensorPtr square(const TensorPtr& a);
TensorPtr abs_val(const TensorPtr& a);
TensorPtr relu(const TensorPtr& a);
TensorPtr sigmoid(const TensorPtr& a);

// C[i,j] = sum_k A[i,k] * B[k,j]
TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
TensorPtr transpose2d(const TensorPtr& a);
// x: [N,k], bias: [k]; adds bias to every row.
TensorPtr add_row_bias(const TensorPtr& x, const TensorPtr& bias);

TensorPtr reshape(const TensorPtr& a, Shape new_shape);
// out[i] = x[perm[i]] over flat row-major indices; shared indices accumulate
// on the backward pass.
TensorPtr gather_flat(const TensorPtr& x, std::shared_ptr<const std::vector<int64_t>> perm,
                      Shape out_shape);
TensorPtr gather_rows(const TensorPtr& x, std::vector<int64_t> rows);
TensorPtr slice_rows(const TensorPtr& x, int64_t start, int64_t count);
TensorPtr slice_cols(const TensorPtr& x, int64_t start, int64_t count);
TensorPtr concat_rows(const std::vector<TensorPtr>& parts);
TensorPtr concat_cols(const std::vector<TensorPtr>& parts);
// [N,d] token matrix <-> [d,grid_h,grid_w] feature map, N == grid_h*grid_w.
TensorPtr tokens_to_chw(const TensorPtr& tokens, int64_t grid_h, int64_t grid_w);
TensorPtr chw_to_tokens(const TensorPtr& chw);

// exp(x - max) / sum along `axis`; max subtraction keeps large inputs finite
// without changing the result.
TensorPtr softmax(const TensorPtr& x, int64_t axis);
TensorPtr sum_all(const TensorPtr& x);
TensorPtr mean_all(const TensorPtr& x);
// [N,d] -> [1,d]
TensorPtr mean_rows(const TensorPtr& x);
// Per-row normalization of [N,d] to zero mean / unit variance over d,
// then y = gamma * xhat + beta.
TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                     double eps = 1e-5);

// x: [C_in,H,W], w: [C_out,C_in], b: [C_out]  (1x1 convolution)
TensorPtr pointwise_conv(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b);
TensorPtr global_avg_pool(const TensorPtr& x);
// Bin (i,j) averages input rows [floor(i*H/h), ceil((i+1)*H/h)) and the
// matching column range; out extents must not exceed the input's.
TensorPtr adaptive_avg_pool(const TensorPtr& x, int64_t out_h, int64_t out_w);
// x: [C,H,W], gate: [C,1,1]; multiplies channel c by gate[c].
TensorPtr channel_scale(const TensorPtr& x, const TensorPtr& gate);

// ---------------------------------------------------------------------------
// Reverse-mode differentiation.
// ---------------------------------------------------------------------------

// Seeds d(loss)/d(loss)=1 and propagates through the tape in reverse
// topological order, visiting each node exactly once. Repeated calls
// accumulate into leaf gradients.
void backward(const TensorPtr& loss);

using TensorFn = std::function<TensorPtr(const std::vector<TensorPtr>&)>;

// Central-difference audit of the tape. Returns the max over all input
// coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|).
// f must be scalar-valued and smooth at the probe point.
double grad_check(const TensorFn& f, const std::vector<TensorPtr>& inputs, double eps = 1e-4);

}  // namespace msscanet
