#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gpdnn/error.hpp"

namespace gpdnn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

/// Dense row-major float64 array.
///
/// Storage is shared between copies and cloned on the first mutable access,
/// so passing tensors by value is cheap and a tensor that nobody mutates can
/// be read from several threads at once.
class Tensor {
public:
    Tensor() : Tensor(Shape{0}) {}

    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<double>>(shape_size(shape_), fill)) {}

    Tensor(Shape shape, std::vector<double> values)
        : shape_(std::move(shape)), data_(std::make_shared<std::vector<double>>(std::move(values))) {
        if (data_->size() != shape_size(shape_)) {
            throw ShapeError("tensor: " + std::to_string(data_->size()) +
                             " values do not fill shape " + shape_string(shape_));
        }
    }

    static Tensor scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
    static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
    static Tensor identity(std::size_t n) {
        Tensor t(Shape{n, n});
        auto d = t.mutable_data();
        for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
        return t;
    }
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r ? rows.begin()->size() : 0;
        std::vector<double> values;
        values.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) throw ShapeError("tensor: ragged matrix literal");
            values.insert(values.end(), row.begin(), row.end());
        }
        return Tensor(Shape{r, c}, std::move(values));
    }
    static Tensor vector(std::initializer_list<double> values) {
        return Tensor(Shape{values.size()}, std::vector<double>(values));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_->size(); }

    std::span<const double> data() const noexcept { return {data_->data(), data_->size()}; }
    const double* ptr() const noexcept { return data_->data(); }

    /// Writable view; detaches from any other tensor sharing the storage.
    std::span<double> mutable_data() {
        if (data_.use_count() > 1) data_ = std::make_shared<std::vector<double>>(*data_);
        return {data_->data(), data_->size()};
    }
    double* mutable_ptr() { return mutable_data().data(); }

    double operator[](std::size_t i) const { return (*data_)[i]; }
    double item() const {
        if (size() != 1) throw ShapeError("tensor: item() on shape " + shape_string(shape_));
        return (*data_)[0];
    }
    double at(std::size_t i, std::size_t j) const { return (*data_)[i * shape_.at(1) + j]; }

    /// Same storage, new shape.
    Tensor reshaped(Shape shape) const {
        if (shape_size(shape) != size()) {
            throw ShapeError("tensor: cannot reshape " + shape_string(shape_) + " to " +
                             shape_string(shape));
        }
        Tensor t = *this;
        t.shape_ = std::move(shape);
        return t;
    }

    /// Deep copy.
    Tensor clone() const { return Tensor(shape_, *data_); }

    bool all_finite() const {
        return std::all_of(data_->begin(), data_->end(), [](double v) { return std::isfinite(v); });
    }

    bool shares_storage_with(const Tensor& other) const { return data_ == other.data_; }

    /// Exact equality of shape and every value.
    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && (a.data_ == b.data_ || *a.data_ == *b.data_);
    }

private:
    Shape shape_;
    std::shared_ptr<std::vector<double>> data_;
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("max_abs_diff: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

/// Rows [begin, end) along the leading axis.
inline Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
    if (t.rank() == 0 || begin > end || end > t.dim(0)) {
        throw ShapeError("slice_rows: bad range on " + shape_string(t.shape()));
    }
    const std::size_t row = t.dim(0) ? t.size() / t.dim(0) : 0;
    Shape shape = t.shape();
    shape[0] = end - begin;
    std::vector<double> values(t.ptr() + begin * row, t.ptr() + end * row);
    return Tensor(std::move(shape), std::move(values));
}

/// Rows picked by index along the leading axis.
inline Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows) {
    if (t.rank() == 0) throw ShapeError("gather_rows: scalar tensor");
    const std::size_t row = t.dim(0) ? t.size() / t.dim(0) : 0;
    Shape shape = t.shape();
    shape[0] = rows.size();
    std::vector<double> values;
    values.reserve(rows.size() * row);
    for (std::size_t r : rows) {
        if (r >= t.dim(0)) throw ShapeError("gather_rows: row index out of range");
        values.insert(values.end(), t.ptr() + r * row, t.ptr() + (r + 1) * row);
    }
    return Tensor(std::move(shape), std::move(values));
}

}  // namespace gpdnn
