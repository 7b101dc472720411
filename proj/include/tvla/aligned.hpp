// Copyright (C) 2026 The tvla Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <new>
#include <vector>

namespace tvla {

/// Allocator with a fixed 64-byte base alignment. Vectorized reductions peel
/// a head that depends on the address, so flat buffers need a stable
/// alignment for results to be reproducible across allocations.
template <typename T> struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() noexcept = default;
    template <typename U> AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

    template <typename U> friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
        return true;
    }
};

template <typename T> using ParamVector = std::vector<T, AlignedAllocator<T>>;

} // namespace tvla
