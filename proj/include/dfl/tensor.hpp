#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "dfl/errors.hpp"

namespace dfl {

// Dense row-major tensor of doubles, rank 1-4. Small on purpose: the models
// here are desk-scale and everything runs on flat loops.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> dims) : dims_(std::move(dims)) {
        std::size_t n = 1;
        for (int d : dims_) {
            if (d <= 0) throw ShapeError("tensor dimension must be positive");
            n *= static_cast<std::size_t>(d);
        }
        data_.assign(n, 0.0);
        compute_strides();
    }

    Tensor(std::initializer_list<int> dims) : Tensor(std::vector<int>(dims)) {}

    const std::vector<int>& dims() const { return dims_; }
    std::size_t size() const { return data_.size(); }
    bool same_shape(const Tensor& other) const { return dims_ == other.dims_; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& operator()(int i) { return data_[static_cast<std::size_t>(i)]; }
    double& operator()(int i, int j) { return data_[static_cast<std::size_t>(i) * strides_[0] + j]; }
    double& operator()(int i, int j, int k) {
        return data_[static_cast<std::size_t>(i) * strides_[0] + static_cast<std::size_t>(j) * strides_[1] + k];
    }
    double& operator()(int i, int j, int k, int l) {
        return data_[static_cast<std::size_t>(i) * strides_[0] + static_cast<std::size_t>(j) * strides_[1] +
                     static_cast<std::size_t>(k) * strides_[2] + l];
    }
    double operator()(int i) const { return data_[static_cast<std::size_t>(i)]; }
    double operator()(int i, int j) const { return data_[static_cast<std::size_t>(i) * strides_[0] + j]; }
    double operator()(int i, int j, int k) const {
        return data_[static_cast<std::size_t>(i) * strides_[0] + static_cast<std::size_t>(j) * strides_[1] + k];
    }
    double operator()(int i, int j, int k, int l) const {
        return data_[static_cast<std::size_t>(i) * strides_[0] + static_cast<std::size_t>(j) * strides_[1] +
                     static_cast<std::size_t>(k) * strides_[2] + l];
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool operator==(const Tensor& other) const { return dims_ == other.dims_ && data_ == other.data_; }

private:
    void compute_strides() {
        strides_.assign(dims_.size(), 1);
        for (int i = static_cast<int>(dims_.size()) - 2; i >= 0; --i) {
            strides_[i] = strides_[i + 1] * static_cast<std::size_t>(dims_[i + 1]);
        }
    }

    std::vector<int> dims_;
    std::vector<std::size_t> strides_;
    std::vector<double> data_;
};

}  // namespace dfl
