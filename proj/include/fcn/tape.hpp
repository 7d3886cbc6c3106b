#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "fcn/tensor.hpp"

namespace fcn {

// Handle to a value recorded on a Tape.
struct Var {
    std::int64_t id = -1;
    bool valid() const { return id >= 0; }
};

// Define-by-run reverse-mode tape. Operators append a value slot per output
// plus a closure that pulls the output gradient and accumulates into the
// input slots. Replaying the closures in reverse recording order visits each
// node exactly once; a slot consumed by k operations receives the sum of the
// k contributions because every write is "+=".
template <typename T>
class Tape {
public:
    explicit Tape(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }

    // Plain input (activations, batch data). Grad is tracked so chained
    // operators can propagate through it.
    Var leaf(Tensor<T> t) {
        slots_.push_back(SlotData{std::move(t), Tensor<T>{}, nullptr});
        return Var{static_cast<std::int64_t>(slots_.size()) - 1};
    }

    // Parameter leaf: after backward() the slot gradient is added into
    // p.grad. The same Parameter may be used through several slots.
    Var use(Parameter<T>& p) {
        slots_.push_back(SlotData{p.value, Tensor<T>{}, &p});
        return Var{static_cast<std::int64_t>(slots_.size()) - 1};
    }

    // Appends an operation output and its backward rule. The rule receives
    // the tape and the output Var so it can read the accumulated output
    // gradient and add contributions into its input slots.
    template <typename Fn>
    Var record(Tensor<T> out, Fn&& backward_fn) {
        slots_.push_back(SlotData{std::move(out), Tensor<T>{}, nullptr});
        const Var v{static_cast<std::int64_t>(slots_.size()) - 1};
        if (recording_) {
            nodes_.push_back(
                Node{v, std::function<void(Tape&, Var)>(std::forward<Fn>(backward_fn))});
        }
        return v;
    }

    const Tensor<T>& value(Var v) const { return slots_.at(check(v)).value; }
    Tensor<T>& value_mut(Var v) { return slots_.at(check(v)).value; }

    // Gradient buffer for a slot, allocated to zeros on first access.
    Tensor<T>& grad(Var v) {
        SlotData& s = slots_.at(check(v));
        if (s.grad.data.empty()) s.grad = Tensor<T>(s.value.shape);
        return s.grad;
    }

    bool has_grad(Var v) const { return !slots_.at(check(v)).grad.data.empty(); }

    // Reverse replay from a scalar loss. Fills Parameter::grad (additively)
    // for every parameter reachable from the loss.
    void backward(Var loss) {
        if (!recording_) throw ContractError("backward: tape was not recording");
        if (consumed_) throw ContractError("backward: tape already replayed; re-record the forward pass");
        const Tensor<T>& lv = value(loss);
        if (!lv.scalar()) {
            throw ContractError("backward: loss must be scalar (1,1,1,1), got " + lv.shape.str());
        }
        consumed_ = true;
        grad(loss).data[0] = T{1};
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (has_grad(it->out)) it->fn(*this, it->out);
        }
        for (SlotData& s : slots_) {
            if (s.param != nullptr && !s.grad.data.empty()) {
                Tensor<T>& g = s.param->grad;
                if (g.shape != s.grad.shape) throw ContractError("backward: parameter shape drift");
                for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += s.grad.data[i];
            }
        }
    }

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct SlotData {
        Tensor<T> value;
        Tensor<T> grad;       // empty until touched
        Parameter<T>* param;  // non-null for parameter leaves
    };
    struct Node {
        Var out;
        std::function<void(Tape&, Var)> fn;
    };

    std::int64_t check(Var v) const {
        if (!v.valid() || v.id >= static_cast<std::int64_t>(slots_.size())) {
            throw ContractError("invalid Var handle");
        }
        return v.id;
    }

    std::vector<SlotData> slots_;
    std::vector<Node> nodes_;
    bool recording_;
    bool consumed_ = false;
};

}  // namespace fcn
