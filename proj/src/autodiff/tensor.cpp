#include "cryda/tensor.hpp"

#include <numeric>
#include <sstream>

namespace cryda::ad {

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape s, std::vector<float> values) : shape(std::move(s)), data(std::move(values)) {
    if (numel(shape) != std::int64_t(data.size()))
        throw ShapeError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
}

Tensor Tensor::zeros(Shape s) {
    Tensor t;
    t.data.assign(std::size_t(numel(s)), 0.0f);
    t.shape = std::move(s);
    return t;
}

Tensor Tensor::full(Shape s, float value) {
    Tensor t = zeros(std::move(s));
    for (auto& v : t.data) v = value;
    return t;
}

Tensor Tensor::scalar(float value) { return Tensor({}, {value}); }

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
}

void Tensor::zero_grad() {
    if (!grad.empty()) grad.assign(data.size(), 0.0f);
}

float& Tensor::at(std::initializer_list<int> idx) {
    std::int64_t off = 0;
    auto it = idx.begin();
    for (std::size_t d = 0; d < shape.size(); ++d, ++it) off = off * shape[d] + *it;
    return data[std::size_t(off)];
}

float Tensor::at(std::initializer_list<int> idx) const {
    return const_cast<Tensor*>(this)->at(idx);
}

}  // namespace cryda::ad
