#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "cryda/errors.hpp"

namespace cryda::ad {

using Shape = std::vector<int>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major float32 grid. `grad`, when allocated, always mirrors
// `data`'s shape.
struct Tensor {
    Shape shape;
    std::vector<float> data;
    bool requires_grad = false;
    std::vector<float> grad;

    Tensor() = default;
    Tensor(Shape s, std::vector<float> values);

    static Tensor zeros(Shape s);
    static Tensor full(Shape s, float value);
    static Tensor scalar(float value);

    std::int64_t size() const { return std::int64_t(data.size()); }
    int dim(int i) const { return shape[std::size_t(i)]; }
    int rank() const { return int(shape.size()); }

    void ensure_grad();
    void zero_grad();

    float& at(std::initializer_list<int> idx);
    float at(std::initializer_list<int> idx) const;
};

}  // namespace cryda::ad
