#include "ddimedit/tensor.hpp"

#include <cmath>
#include <numeric>

#include "ddimedit/errors.hpp"
#include "ddimedit/kernels.hpp"

namespace ddimedit {

std::size_t element_count(const std::vector<std::int64_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) {
        if (d < 0) throw ContractError("negative dimension in shape " + shape_string(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_string(const std::vector<std::int64_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += " x ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(std::vector<std::int64_t> shape, float fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(std::vector<std::int64_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != element_count(shape_))
        throw ContractError("tensor data has " + std::to_string(data_.size()) + " elements, shape " +
                            shape_string(shape_) + " needs " + std::to_string(element_count(shape_)));
}

bool Tensor::all_finite() const noexcept { return kernels::all_finite(data_); }

std::span<const float> Tensor::row(std::int64_t r) const {
    if (rank() != 2 || r < 0 || r >= shape_[0]) throw ContractError("row index out of range");
    return std::span<const float>(data_).subspan(static_cast<std::size_t>(r * shape_[1]),
                                                 static_cast<std::size_t>(shape_[1]));
}

std::span<float> Tensor::row(std::int64_t r) {
    if (rank() != 2 || r < 0 || r >= shape_[0]) throw ContractError("row index out of range");
    return std::span<float>(data_).subspan(static_cast<std::size_t>(r * shape_[1]),
                                           static_cast<std::size_t>(shape_[1]));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw ContractError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                            shape_string(b.shape()));
}

double l2_norm(const Tensor& t) { return kernels::norm(t.values()); }

double relative_error(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "relative_error");
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        num += d * d;
        den += static_cast<double>(b[i]) * static_cast<double>(b[i]);
    }
    return den == 0.0 ? std::sqrt(num) : std::sqrt(num / den);
}

}  // namespace ddimedit
