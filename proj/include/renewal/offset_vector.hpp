#pragma once

#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace renewal {

// Day index on the model's time axis. Observations live on 1..T; latent
// infections extend to 1-K_m-K_w.
using Day = long;

// A dense vector addressed by day, with an arbitrary (possibly negative) first day.
template <class T>
class OffsetVector {
public:
    OffsetVector() = default;
    OffsetVector(Day first, std::size_t n, T value = T{}) : first_(first), data_(n, value) {}
    OffsetVector(Day first, std::vector<T> data) : first_(first), data_(std::move(data)) {}

    Day first() const noexcept { return first_; }
    Day last() const noexcept { return first_ + static_cast<Day>(data_.size()) - 1; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }
    bool contains(Day d) const noexcept { return d >= first_ && d <= last(); }

    T& operator[](Day d) {
        assert(contains(d));
        return data_[static_cast<std::size_t>(d - first_)];
    }
    const T& operator[](Day d) const {
        assert(contains(d));
        return data_[static_cast<std::size_t>(d - first_)];
    }

    std::vector<T>& values() noexcept { return data_; }
    const std::vector<T>& values() const noexcept { return data_; }
    std::span<const T> view() const noexcept { return data_; }

    auto begin() noexcept { return data_.begin(); }
    auto end() noexcept { return data_.end(); }
    auto begin() const noexcept { return data_.begin(); }
    auto end() const noexcept { return data_.end(); }

    bool operator==(const OffsetVector&) const = default;

private:
    Day first_ = 0;
    std::vector<T> data_;
};

} // namespace renewal
