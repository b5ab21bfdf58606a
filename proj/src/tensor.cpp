#include "rbnet/tensor.hpp"

#include <algorithm>

namespace rbnet {

int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d < 0) throw DimensionError("negative extent in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::string s = "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    s += ")";
    return s;
}

Tensor Tensor::make(std::vector<int> shape, bool requires_grad) {
    auto impl = std::make_shared<Impl>();
    impl->shape = std::move(shape);
    impl->data.assign(size_t(shape_numel(impl->shape)), 0.0f);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    return make(std::move(shape), requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, float value, bool requires_grad) {
    Tensor t = make(std::move(shape), requires_grad);
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
    return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<float> values, bool requires_grad) {
    auto impl = std::make_shared<Impl>();
    impl->shape = std::move(shape);
    if (int64_t(values.size()) != shape_numel(impl->shape))
        throw DimensionError("data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(impl->shape));
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

float& Tensor::at(std::initializer_list<int> idx) {
    const auto& sh = impl_->shape;
    if (idx.size() != sh.size()) throw DimensionError("index rank mismatch");
    int64_t off = 0;
    size_t i = 0;
    for (int v : idx) {
        off = off * sh[i] + v;
        ++i;
    }
    return impl_->data[size_t(off)];
}

float Tensor::at(std::initializer_list<int> idx) const {
    return const_cast<Tensor*>(this)->at(idx);
}

namespace {
thread_local GradTape* g_active_tape = nullptr;
}

GradTape* GradTape::active() { return g_active_tape; }

TapeScope::TapeScope(GradTape& tape) {
    prev_ = g_active_tape;
    g_active_tape = &tape;
}

TapeScope::~TapeScope() { g_active_tape = prev_; }

void GradTape::backward(Tensor loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw UsageError("backward() requires a scalar loss, got shape " +
                         (loss.defined() ? shape_str(loss.shape()) : std::string("<empty>")));
    loss.ensure_grad()[0] += 1.0f;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

bool tape_should_record(std::initializer_list<const Tensor*> inputs) {
    if (!GradTape::active()) return false;
    for (const Tensor* t : inputs)
        if (t && t->defined() && t->requires_grad()) return true;
    return false;
}

}  // namespace rbnet
