#include "crayon/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace crayon {

std::size_t element_count(const Dims& dims) {
    std::size_t n = 1;
    for (int d : dims) {
        if (d < 0) {
            throw std::invalid_argument("negative dimension in " + dims_to_string(dims));
        }
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string dims_to_string(const Dims& dims) {
    std::string out = "[";
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(dims[i]);
    }
    return out + "]";
}

Tensor::Tensor(Dims dims, double fill) : dims_(std::move(dims)), data_(element_count(dims_), fill) {}

Tensor::Tensor(Dims dims, std::vector<double> data) : dims_(std::move(dims)), data_(std::move(data)) {
    if (data_.size() != element_count(dims_)) {
        throw std::invalid_argument("tensor data size " + std::to_string(data_.size()) +
                                    " does not match dims " + dims_to_string(dims_));
    }
}

std::size_t Tensor::sample_size() const {
    if (dims_.empty() || dims_[0] == 0) return 0;
    return data_.size() / static_cast<std::size_t>(dims_[0]);
}

Tensor Tensor::reshaped(Dims dims) const {
    if (element_count(dims) != data_.size()) {
        throw std::invalid_argument("cannot reshape " + dims_to_string(dims_) + " to " + dims_to_string(dims));
    }
    return Tensor(std::move(dims), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

}  // namespace crayon
