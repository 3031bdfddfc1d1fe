#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace crayon {

using Dims = std::vector<int>;

std::size_t element_count(const Dims& dims);
std::string dims_to_string(const Dims& dims);

// Dense row-major array of doubles. Value type; copies are deep.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Dims dims, double fill = 0.0);
    Tensor(Dims dims, std::vector<double> data);

    const Dims& dims() const { return dims_; }
    int rank() const { return static_cast<int>(dims_.size()); }
    int dim(int axis) const { return dims_.at(static_cast<std::size_t>(axis)); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // Number of elements per leading-axis slice.
    std::size_t sample_size() const;

    Tensor reshaped(Dims dims) const;
    void fill(double v);

    bool operator==(const Tensor& other) const = default;

  private:
    Dims dims_;
    std::vector<double> data_;
};

}  // namespace crayon
