// SPDX-License-Identifier: Apache-2.0
#include "m21/tape.hpp"

#include <optional>
#include <unordered_map>
#include <unordered_set>

#include "m21/ops.hpp"

namespace m21 {

namespace {

thread_local Tape* t_current_tape = nullptr;
thread_local TapeState* t_current_state = nullptr;
thread_local bool t_grad_enabled = true;

}  // namespace

class TapeState : public std::enable_shared_from_this<TapeState> {
 public:
  struct Node {
    const char* name;
    std::vector<Tensor> inputs;
    BackwardFn fn;
  };

  std::vector<Node> nodes;
  std::vector<std::shared_ptr<detail::TensorImpl>> leaves;
  std::unordered_set<const detail::TensorImpl*> leaf_set;
  std::vector<std::int64_t> visit_order;
  bool consumed = false;

  Tensor record(const char* name, Tensor out, std::vector<Tensor> inputs, BackwardFn fn) {
    if (consumed) throw ContractError("recording on a tape that was consumed by backward(); call reset()");
    for (const auto& in : inputs) {
      if (!in.defined()) continue;
      auto& impl = in.impl();
      if (impl.node >= 0) {
        if (impl.tape.lock().get() != this) {
          throw ContractError(std::string("operation '") + name +
                              "' mixes tensors recorded on different tapes");
        }
      } else if (impl.requires_grad && leaf_set.insert(&impl).second) {
        leaves.push_back(in.impl_);
      }
    }
    auto& impl = out.impl();
    impl.tape = weak_from_this();
    impl.node = static_cast<std::int64_t>(nodes.size());
    nodes.push_back(Node{name, std::move(inputs), std::move(fn)});
    return out;
  }

  std::int64_t node_of(const Tensor& t) const {
    const auto& impl = t.impl();
    if (impl.node < 0) return -1;
    if (impl.tape.lock().get() != this) throw ContractError("tensor was recorded on a different tape");
    return impl.node;
  }

  // Reverse sweep from `root`. Returns the gradient of every requested
  // intermediate node and every leaf reached.
  struct SweepResult {
    std::unordered_map<std::int64_t, Tensor> nodes;
    std::unordered_map<const detail::TensorImpl*, Tensor> leaves;
  };

  SweepResult sweep(const Tensor& root, const std::unordered_set<std::int64_t>& wanted_nodes,
                    bool create_graph) {
    const auto root_node = node_of(root);
    if (root_node < 0) throw ContractError("backward root is not the output of a recorded operation");
    if (root.numel() != 1) {
      throw ShapeError("backward root must be a scalar, got shape " + shape_str(root.shape()));
    }
    std::vector<Tensor> grads(static_cast<std::size_t>(root_node) + 1);
    grads[static_cast<std::size_t>(root_node)] = Tensor(root.shape(), 1.0f);
    SweepResult result;
    visit_order.clear();

    std::optional<NoGradGuard> guard;
    if (!create_graph) guard.emplace();

    for (auto i = root_node; i >= 0; --i) {
      auto& slot = grads[static_cast<std::size_t>(i)];
      if (!slot.defined()) continue;
      Tensor g = std::move(slot);
      slot = Tensor();
      if (wanted_nodes.count(i)) result.nodes[i] = g;
      visit_order.push_back(i);

      // nodes may grow while fn runs (create_graph), so copy what we need
      const char* name = nodes[static_cast<std::size_t>(i)].name;
      std::vector<Tensor> inputs = nodes[static_cast<std::size_t>(i)].inputs;
      BackwardFn fn = nodes[static_cast<std::size_t>(i)].fn;
      std::vector<Tensor> input_grads = fn(g);
      if (input_grads.size() != inputs.size()) {
        throw Error(std::string("backward of '") + name + "' returned the wrong number of gradients");
      }
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto& gi = input_grads[k];
        const auto& in = inputs[k];
        if (!gi.defined() || !in.defined()) continue;
        if (gi.shape() != in.shape()) {
          throw ShapeError(std::string("backward of '") + name + "' produced gradient " +
                           shape_str(gi.shape()) + " for input " + shape_str(in.shape()));
        }
        const auto j = in.impl().node;
        if (j >= 0) {
          if (in.impl().tape.lock().get() != this) continue;
          auto& dst = grads[static_cast<std::size_t>(j)];
          dst = dst.defined() ? add(dst, gi) : gi;
        } else if (in.impl().requires_grad) {
          auto& dst = result.leaves[&in.impl()];
          dst = dst.defined() ? add(dst, gi) : gi;
        }
      }
    }
    return result;
  }
};

Tensor record_op(const char* name, Tensor out, std::vector<Tensor> inputs, BackwardFn fn) {
  if (!recording_enabled()) return out;
  bool any_tracked = false;
  for (const auto& in : inputs) {
    if (in.defined() && in.tracked()) {
      any_tracked = true;
      break;
    }
  }
  if (!any_tracked) return out;
  return t_current_state->record(name, std::move(out), std::move(inputs), std::move(fn));
}

bool recording_enabled() { return t_grad_enabled && t_current_state != nullptr; }

Tape::Tape() : state_(std::make_shared<TapeState>()), previous_(t_current_tape) {
  t_current_tape = this;
  t_current_state = state_.get();
}

Tape::~Tape() {
  if (t_current_tape == this) {
    t_current_tape = previous_;
    t_current_state = previous_ ? previous_->state_.get() : nullptr;
  }
}

void Tape::backward(const Tensor& loss) {
  if (state_->consumed) throw ContractError("backward() called twice on the same tape without reset()");
  auto result = state_->sweep(loss, {}, false);
  for (const auto& leaf : state_->leaves) {
    auto it = result.leaves.find(leaf.get());
    Tensor g = it != result.leaves.end() ? it->second.detach() : Tensor(leaf->shape, 0.0f);
    if (leaf->grad) {
      NoGradGuard guard;
      leaf->grad = add(Tensor(leaf->grad), g).impl_;
    } else {
      leaf->grad = g.clone().impl_;
    }
  }
  state_->consumed = true;
  state_->nodes.clear();
  state_->nodes.shrink_to_fit();
}

std::vector<Tensor> Tape::grad(const Tensor& output, const std::vector<Tensor>& inputs,
                               bool create_graph) {
  if (state_->consumed) throw ContractError("grad() on a tape already consumed by backward()");
  std::unordered_set<std::int64_t> wanted;
  for (const auto& in : inputs) {
    const auto j = state_->node_of(in);
    if (j >= 0) wanted.insert(j);
  }
  auto result = state_->sweep(output, wanted, create_graph);
  std::vector<Tensor> out;
  out.reserve(inputs.size());
  for (const auto& in : inputs) {
    Tensor g;
    if (in.impl().node >= 0) {
      auto it = result.nodes.find(in.impl().node);
      if (it != result.nodes.end()) g = it->second;
    } else {
      auto it = result.leaves.find(&in.impl());
      if (it != result.leaves.end()) g = it->second;
    }
    out.push_back(g.defined() ? g : Tensor(in.shape(), 0.0f));
  }
  return out;
}

void Tape::reset() {
  state_ = std::make_shared<TapeState>();
  if (t_current_tape == this) t_current_state = state_.get();
}

std::size_t Tape::size() const { return state_->nodes.size(); }

bool Tape::consumed() const { return state_->consumed; }

std::string Tape::op_name(std::size_t index) const {
  if (index >= state_->nodes.size()) throw ContractError("tape index out of range");
  return state_->nodes[index].name;
}

const std::vector<std::int64_t>& Tape::last_visit_order() const { return state_->visit_order; }

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward on an undefined tensor");
  if (!t_current_tape) throw ContractError("backward() without an active tape");
  t_current_tape->backward(loss);
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

}  // namespace m21
