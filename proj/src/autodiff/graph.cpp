#include "cryda/graph.hpp"

#include <algorithm>

namespace cryda::ad {

const Tensor& Value::tensor() const { return graph->node(id).val(); }

float Value::item() const {
    const Tensor& t = tensor();
    if (t.size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(t.shape));
    return t.data[0];
}

Value Graph::leaf(Tensor& t) {
    Node n;
    n.external = &t;
    n.requires_grad = t.requires_grad;
    nodes_.push_back(std::move(n));
    return Value{this, int(nodes_.size()) - 1};
}

Value Graph::constant(Tensor t) {
    Node n;
    n.value = std::move(t);
    n.requires_grad = false;
    nodes_.push_back(std::move(n));
    return Value{this, int(nodes_.size()) - 1};
}

Value Graph::make(Tensor out, std::vector<Value> inputs, bool requires_grad,
                  std::function<void(Graph&, Node&)> backward_fn) {
    Node n;
    n.value = std::move(out);
    n.requires_grad = requires_grad;
    n.backward_fn = std::move(backward_fn);
    n.inputs.reserve(inputs.size());
    for (const Value& v : inputs) {
        if (v.graph != this) throw Error("op inputs must live on the same graph");
        n.inputs.push_back(v.id);
    }
    nodes_.push_back(std::move(n));
    return Value{this, int(nodes_.size()) - 1};
}

void Graph::accumulate(int id, const float* g, std::int64_t n) {
    Node& nd = nodes_[std::size_t(id)];
    if (!nd.requires_grad) return;
    float* buf = grad_buffer(id);
    for (std::int64_t i = 0; i < n; ++i) buf[i] += g[i];
}

float* Graph::grad_buffer(int id) {
    Node& nd = nodes_[std::size_t(id)];
    if (nd.grad.size() != nd.val().data.size()) nd.grad.assign(nd.val().data.size(), 0.0f);
    return nd.grad.data();
}

void Graph::backward(const Value& loss) {
    if (loss.graph != this) throw Error("backward: loss lives on another graph");
    const Node& ln = node(loss.id);
    if (ln.val().size() != 1)
        throw Error("backward requires a scalar loss, got shape " + shape_str(ln.val().shape));

    // Node-local grads are rebuilt per call; only leaf tensors accumulate
    // across calls.
    for (Node& n : nodes_)
        if (!n.grad.empty()) std::fill(n.grad.begin(), n.grad.end(), 0.0f);

    if (!node(loss.id).requires_grad) return;
    float one = 1.0f;
    accumulate(loss.id, &one, 1);

    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[std::size_t(id)];
        if (!n.requires_grad || n.grad.empty()) continue;
        if (n.backward_fn) n.backward_fn(*this, n);
        if (n.external && n.external->requires_grad) {
            n.external->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) n.external->grad[i] += n.grad[i];
        }
    }
}

void Graph::zero_grads() {
    for (Node& n : nodes_) {
        if (!n.grad.empty()) std::fill(n.grad.begin(), n.grad.end(), 0.0f);
        if (n.external) n.external->zero_grad();
    }
}

void Graph::reset() { nodes_.clear(); }

}  // namespace cryda::ad
