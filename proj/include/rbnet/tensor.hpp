#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "rbnet/common.hpp"

namespace rbnet {

// Dense row-major f32 tensor with optional gradient buffer. Copying a Tensor
// copies the handle, not the storage; forward values are treated as immutable
// once an op has consumed them.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, float value, bool requires_grad = false);
    static Tensor from(std::vector<int> shape, std::vector<float> values, bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int>& shape() const { return impl_->shape; }
    int ndim() const { return int(impl_->shape.size()); }
    int dim(int i) const { return impl_->shape[size_t(i)]; }
    int64_t numel() const { return int64_t(impl_->data.size()); }

    float* data() { return impl_->data.data(); }
    const float* data() const { return impl_->data.data(); }
    std::vector<float>& vec() { return impl_->data; }
    const std::vector<float>& vec() const { return impl_->data; }

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    // Allocates a zero-filled gradient buffer on first use.
    float* ensure_grad() {
        if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
        return impl_->grad.data();
    }
    float* grad() { return impl_->grad.data(); }
    const float* grad() const { return impl_->grad.data(); }
    void zero_grad() {
        if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
    }

    // element access by multi-index, for tests and small-scale assembly
    float& at(std::initializer_list<int> idx);
    float at(std::initializer_list<int> idx) const;

    bool same_storage(const Tensor& o) const { return impl_ == o.impl_; }

private:
    struct Impl {
        std::vector<int> shape;
        std::vector<float> data;
        std::vector<float> grad;  // empty until needed; same length as data otherwise
        bool requires_grad = false;
    };
    std::shared_ptr<Impl> impl_;

    explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
    static Tensor make(std::vector<int> shape, bool requires_grad);

    friend int64_t shape_numel(const std::vector<int>& shape);
};

int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Reverse-mode tape. Ops append nodes in execution order, which is a valid
// topological order; backward() replays them in reverse exactly once.
// A tape is single-threaded; independent tapes may live on separate threads.
class GradTape {
public:
    void record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

    // Seeds d(loss)/d(loss) = 1 and runs the recorded closures in reverse.
    // Grad buffers accumulate across calls; callers reset via zero_grad().
    void backward(Tensor loss);

    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    static GradTape* active();

private:
    std::vector<std::function<void()>> nodes_;
    friend class TapeScope;
};

// RAII activation of a tape on the current thread. Ops record only while a
// tape is active, so eval-mode forward passes skip bookkeeping entirely.
class TapeScope {
public:
    explicit TapeScope(GradTape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    GradTape* prev_;
};

// True when a tape is active and at least one input participates in autodiff.
bool tape_should_record(std::initializer_list<const Tensor*> inputs);

}  // namespace rbnet
