#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace plast {

/// Configuration and shape errors: wrong layer wiring, bad masks, invalid
/// config combinations. These indicate a caller bug, not bad data.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Non-finite values produced by a numeric op.
struct NumericFault : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Dense row-major n-d array of doubles. The only numeric carrier in the
/// engine; parameters, activations and batches are all Tensors.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(count(shape_), fill) {}

    Tensor(std::initializer_list<int> shape, double fill = 0.0)
        : Tensor(std::vector<int>(shape), fill) {}

    static Tensor from(std::vector<int> shape, std::vector<double> values) {
        Tensor t;
        if (count(shape) != values.size())
            throw ConfigError("tensor: shape/value count mismatch");
        t.shape_ = std::move(shape);
        t.data_ = std::move(values);
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_.at(i); }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](size_t i) { return data_[i]; }
    double operator[](size_t i) const { return data_[i]; }

    // 2-d access for matrices stored {rows, cols}.
    double& at(int r, int c) { return data_[static_cast<size_t>(r) * shape_[1] + c]; }
    double at(int r, int c) const { return data_[static_cast<size_t>(r) * shape_[1] + c]; }
    double* row(int r) { return data_.data() + static_cast<size_t>(r) * shape_[1]; }
    const double* row(int r) const { return data_.data() + static_cast<size_t>(r) * shape_[1]; }

    int rows() const { return shape_.empty() ? 0 : shape_[0]; }
    int cols() const { return shape_.size() < 2 ? 0 : static_cast<int>(size() / shape_[0]); }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    static size_t count(const std::vector<int>& shape) {
        size_t n = 1;
        for (int d : shape) {
            if (d < 0) throw ConfigError("tensor: negative dimension");
            n *= static_cast<size_t>(d);
        }
        return shape.empty() ? 0 : n;
    }

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

// C[m,n] = sum_k A[m,k] * BT[k,n]; BT given in {K, N} layout.
// The k-outer / n-inner order keeps the hot loop on contiguous memory.
inline void matmul_accumulate(const double* a, int m, int k, const double* bt, int n, double* c) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        double* crow = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = bt + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace plast
