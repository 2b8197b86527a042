#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <span>
#include <type_traits>

#include "artseg/common.hpp"

namespace artseg {

// Precision mode of a tensor/tape family. Training runs in single precision,
// gradient checking in double; the pairing is fixed at compile time, so one
// tape can only ever hold tensors of one precision.
enum class Precision { single32, double64 };

template <typename T>
inline constexpr Precision precision_of =
    std::is_same_v<T, float> ? Precision::single32 : Precision::double64;

template <typename T>
class Tape;

namespace detail {

template <typename T>
struct Storage {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;          // empty until backward needs it
    std::uint64_t tape_id = 0;    // 0 = not recorded on any tape
    int node = -1;                // producing tape node, -1 for leaves

    bool tracked() const { return tape_id != 0; }
};

inline std::atomic<std::uint64_t> next_tape_id{1};

}  // namespace detail

// Dense N-d array with value data, an optional gradient buffer, and an
// optional link to the tape node that produced it. Copies share storage.
template <typename T>
class Tensor {
    static_assert(std::is_floating_point_v<T>);

public:
    Tensor() = default;

    explicit Tensor(Shape shape) {
        validate_shape(shape);
        s_ = std::make_shared<detail::Storage<T>>();
        s_->value.assign(static_cast<std::size_t>(artseg::numel(shape)), T(0));
        s_->shape = std::move(shape);
    }

    static Tensor full(Shape shape, T v) {
        Tensor t(std::move(shape));
        for (T& x : t.s_->value) x = v;
        return t;
    }

    static Tensor from(Shape shape, std::vector<T> data) {
        validate_shape(shape);
        if (static_cast<std::int64_t>(data.size()) != artseg::numel(shape))
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        Tensor t;
        t.s_ = std::make_shared<detail::Storage<T>>();
        t.s_->shape = std::move(shape);
        t.s_->value = std::move(data);
        return t;
    }

    bool defined() const { return s_ != nullptr; }
    const Shape& shape() const { return s_->shape; }
    int rank() const { return static_cast<int>(s_->shape.size()); }
    int dim(int i) const { return s_->shape[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(s_->value.size()); }

    // Spans alias the storage; taking one from a temporary would dangle.
    std::span<T> values() & { return s_->value; }
    std::span<const T> values() const& { return s_->value; }
    std::span<T> values() && = delete;
    std::span<const T> values() const&& = delete;

    // Scalar extraction; the tensor must hold exactly one element.
    T item() const {
        if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
        return s_->value[0];
    }

    bool has_grad() const { return s_ && !s_->grad.empty(); }

    std::span<T> grad() & {
        if (!has_grad()) throw UsageError("tensor has no gradient buffer");
        return s_->grad;
    }
    std::span<const T> grad() const& {
        if (!has_grad()) throw UsageError("tensor has no gradient buffer");
        return s_->grad;
    }
    std::span<T> grad() && = delete;
    std::span<const T> grad() const&& = delete;

    void ensure_grad() {
        if (s_->grad.empty()) s_->grad.assign(s_->value.size(), T(0));
    }
    void clear_grad() { s_->grad.clear(); }

    bool tracked() const { return s_ && s_->tracked(); }
    int node() const { return s_ ? s_->node : -1; }

    // Deep copy of values only; the clone is untracked and grad-free.
    Tensor clone() const {
        Tensor t;
        t.s_ = std::make_shared<detail::Storage<T>>();
        t.s_->shape = s_->shape;
        t.s_->value = s_->value;
        return t;
    }

    bool same_storage(const Tensor& other) const { return s_ == other.s_; }

    std::shared_ptr<detail::Storage<T>>& impl() { return s_; }
    const std::shared_ptr<detail::Storage<T>>& impl() const { return s_; }

private:
    static void validate_shape(const Shape& shape) {
        if (shape.empty()) return;  // rank-0 scalar is allowed
        for (int d : shape)
            if (d < 1) throw DimensionError("non-positive dimension in shape " + shape_str(shape));
    }

    std::shared_ptr<detail::Storage<T>> s_;
};

// Reverse-mode tape: an append-only list of operation nodes in execution
// order (so every node's inputs precede it). backward() replays the list
// once, in reverse, accumulating gradients additively across fan-out.
template <typename T>
class Tape {
public:
    Tape() : id_(detail::next_tape_id.fetch_add(1)) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // RAII activation; ops record onto the innermost active tape.
    class Scope {
    public:
        explicit Scope(Tape& t) : prev_(current_), mine_(&t) { current_ = &t; }
        ~Scope() { current_ = prev_; }
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape* prev_;
        Tape* mine_;
    };

    Scope activate() { return Scope(*this); }

    static Tape* current() { return current_; }

    std::uint64_t id() const { return id_; }

    // Marks a leaf tensor (typically a parameter or a grad-check input) as
    // belonging to this tape so gradients will be accumulated into it.
    void watch(Tensor<T>& t) {
        if (!t.defined()) throw UsageError("watch() on undefined tensor");
        t.impl()->tape_id = id_;
        t.impl()->node = -1;
    }

    bool owns(const Tensor<T>& t) const { return t.defined() && t.impl()->tape_id == id_; }

    // Appends a node. `backward` reads the output's grad and accumulates
    // into the inputs' grads; it must not touch the tape.
    int record(const char* op, Tensor<T>& output, std::function<void()> backward) {
        output.impl()->tape_id = id_;
        output.impl()->node = static_cast<int>(nodes_.size());
        nodes_.push_back(Node{op, std::move(backward)});
        return output.impl()->node;
    }

    // Escape hatch for tests and composite rules: a node with no output
    // bookkeeping beyond what the closure itself does.
    void record_custom(const char* op, std::function<void()> backward) {
        nodes_.push_back(Node{op, std::move(backward)});
    }

    // Seeds d(loss)/d(loss) = 1 and sweeps the node list in reverse.
    void backward(Tensor<T>& loss) {
        if (!loss.defined() || loss.numel() != 1)
            throw UsageError("backward() requires a scalar loss tensor");
        if (!owns(loss))
            throw UsageError("backward() loss was not recorded on this tape");
        loss.ensure_grad();
        loss.grad()[0] = T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->fn();
    }

    std::size_t node_count() const { return nodes_.size(); }
    const char* node_op(std::size_t i) const { return nodes_[i].op; }

private:
    struct Node {
        const char* op;
        std::function<void()> fn;
    };

    std::uint64_t id_;
    std::vector<Node> nodes_;
    inline static thread_local Tape* current_ = nullptr;
};

namespace detail {

// True when the op executes under an active tape and `t` belongs to it.
template <typename T>
inline bool participates(const Tensor<T>& t) {
    Tape<T>* tape = Tape<T>::current();
    return tape != nullptr && t.defined() && t.impl()->tape_id == tape->id();
}

template <typename T>
inline void accumulate_grad(const std::shared_ptr<Storage<T>>& s, std::size_t i, T v) {
    s->grad[i] += v;
}

template <typename T>
inline void ensure_grad(const std::shared_ptr<Storage<T>>& s) {
    if (s->grad.empty()) s->grad.assign(s->value.size(), T(0));
}

}  // namespace detail

}  // namespace artseg
