#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ddad/tensor.hpp"

namespace ddad {

struct TapeNode {
    const char* op;
    std::shared_ptr<TensorData> output;
    std::function<void()> backward;  // reads output->grad, accumulates into input grads
};

// Records operations in execution order, which is already a topological order
// (an op's inputs exist before its output). backward() walks the list once in
// reverse; a node fires only if gradient reached its output, so subgraphs not
// feeding the loss stay untouched.
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() { return active_slot(); }

    void record(const char* op, std::shared_ptr<TensorData> output, std::function<void()> backward) {
        nodes_.push_back(TapeNode{op, std::move(output), std::move(backward)});
    }

    std::size_t size() const { return nodes_.size(); }

    void backward(const Tensor& loss) {
        if (loss.numel() != 1)
            throw ValueError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
        if (nodes_.empty())
            throw Error("backward on an empty tape");
        if (consumed_)
            throw Error("tape already consumed by backward");
        consumed_ = true;

        loss.ptr()->grad.assign(1, 1.0);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (it->output->grad.empty()) continue;  // not reachable from the loss
            it->backward();
        }
    }

    // Scoped activation: ops record themselves only while some tape is active.
    class Scope {
      public:
        explicit Scope(Tape& t) : prev_(active_slot()) { active_slot() = &t; }
        ~Scope() { active_slot() = prev_; }
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

      private:
        Tape* prev_;
    };

  private:
    static Tape*& active_slot() {
        thread_local Tape* current = nullptr;
        return current;
    }

    std::vector<TapeNode> nodes_;
    bool consumed_ = false;
};

// Helper shared by all ops: decide whether the result participates in the
// graph, and if so register its backward rule.
inline void record_op(const char* op, std::initializer_list<Tensor> inputs, Tensor& out,
                      std::function<void()> backward) {
    Tape* tape = Tape::active();
    bool track = false;
    if (tape) {
        for (const Tensor& in : inputs) {
            if (in.requires_grad()) {
                track = true;
                break;
            }
        }
    }
    out.set_requires_grad(track);
    if (track) tape->record(op, out.ptr(), std::move(backward));
}

// Grad-buffer access inside backward rules: allocate lazily, skip constants.
inline std::vector<double>* grad_sink(const std::shared_ptr<TensorData>& t) {
    if (!t->requires_grad) return nullptr;
    if (t->grad.empty()) t->grad.assign(t->values.size(), 0.0);
    return &t->grad;
}

}  // namespace ddad
