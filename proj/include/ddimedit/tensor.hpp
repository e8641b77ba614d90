#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ddimedit {

// Dense row-major float32 tensor. Value type: copies are deep.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> shape, float fill = 0.0f);
    Tensor(std::vector<std::int64_t> shape, std::vector<float> data);

    const std::vector<std::int64_t>& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::int64_t dim(std::size_t i) const { return shape_.at(i); }

    std::span<float> values() noexcept { return data_; }
    std::span<const float> values() const noexcept { return data_; }
    float* data() noexcept { return data_.data(); }
    const float* data() const noexcept { return data_.data(); }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
    bool all_finite() const noexcept;

    // Row view of a rank-2 tensor.
    std::span<const float> row(std::int64_t r) const;
    std::span<float> row(std::int64_t r);

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::vector<std::int64_t> shape_;
    std::vector<float> data_;
};

std::string shape_string(const std::vector<std::int64_t>& shape);
std::size_t element_count(const std::vector<std::int64_t>& shape);

// Throws ContractError naming both shapes when they differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

double l2_norm(const Tensor& t);
// ||a - b|| / ||b||; returns ||a|| when b is zero.
double relative_error(const Tensor& a, const Tensor& b);

}  // namespace ddimedit
