#include "npusim/scheduler.hpp"

#include <algorithm>
#include <limits>

#include "npusim/cost_model.hpp"

namespace npusim {

DependencyGraph build_dependencies(int num_chunks, int num_stages,
                                   const std::vector<StageKind>& stage_kinds,
                                   const std::vector<Processor>& stage_procs,
                                   const std::vector<int64_t>& durations) {
  if (num_chunks < 1 || num_stages < 1)
    throw ValueError("build_dependencies: N and M must be >= 1");
  if (static_cast<int>(stage_kinds.size()) != num_stages ||
      static_cast<int>(stage_procs.size()) != num_stages)
    throw ValueError("build_dependencies: need one kind/processor per stage");
  if (static_cast<int>(durations.size()) != num_chunks * num_stages)
    throw ValueError("build_dependencies: need one duration per node");

  DependencyGraph g;
  g.num_chunks = num_chunks;
  g.num_stages = num_stages;
  g.nodes.resize(static_cast<size_t>(num_chunks) * num_stages);
  g.predecessors.assign(g.nodes.size(), {});
  g.successors.assign(g.nodes.size(), {});

  for (int i = 0; i < num_chunks; ++i) {
    for (int j = 0; j < num_stages; ++j) {
      const int idx = g.index(i, j);
      SubgraphNode& n = g.nodes[idx];
      n.chunk = i;
      n.stage = j;
      n.processor = stage_procs[j];
      n.duration = durations[idx];
      if (n.duration <= 0)
        throw ValueError("build_dependencies: node duration must be positive");

      if (j == 0) continue;
      if (stage_kinds[j] == StageKind::Attention) {
        for (int p = 0; p <= i; ++p) g.predecessors[idx].push_back(g.index(p, j - 1));
      } else {
        g.predecessors[idx].push_back(g.index(i, j - 1));
      }
      for (int p : g.predecessors[idx]) g.successors[p].push_back(idx);
    }
  }
  return g;
}

DependencyGraph dependencies_from_trace(const std::vector<TraceEvent>& trace,
                                        const CostModel& costs) {
  if (trace.empty()) throw ValueError("dependencies_from_trace: empty trace");
  int num_chunks = 0, num_stages = 0;
  for (const auto& e : trace) {
    num_chunks = std::max(num_chunks, e.chunk + 1);
    num_stages = std::max(num_stages, e.stage + 1);
  }
  std::vector<StageKind> kinds(num_stages, StageKind::LinearQkv);
  std::vector<Processor> procs(num_stages, Processor::NPU);
  std::vector<int64_t> durations(
      static_cast<size_t>(num_chunks) * num_stages, 0);
  std::vector<bool> seen(durations.size(), false);

  for (const auto& e : trace) {
    const int idx = e.chunk * num_stages + e.stage;
    if (seen[idx]) throw ValueError("dependencies_from_trace: duplicate event");
    seen[idx] = true;
    kinds[e.stage] = stage_kind_at(e.stage);
    procs[e.stage] = e.processor;
    durations[idx] = costs.lookup(e.cost_key);
  }
  for (bool s : seen)
    if (!s) throw ValueError("dependencies_from_trace: missing (chunk, stage) event");
  return build_dependencies(num_chunks, num_stages, kinds, procs, durations);
}

int64_t contribution(const DependencyGraph& g, int node,
                     const std::vector<bool>& completed_or_running) {
  if (node < 0 || node >= g.size()) throw ValueError("contribution: bad node");
  if (completed_or_running[node]) throw ValueError("contribution: node already active");
  for (int p : g.predecessors[node])
    if (!completed_or_running[p]) throw ValueError("contribution: node not ready");

  const Processor gp = g.nodes[node].processor;
  int64_t sum = 0;
  for (int succ : g.successors[node]) {
    if (completed_or_running[succ]) continue;
    bool ready_now = true;
    bool ready_after = true;
    for (int p : g.predecessors[succ]) {
      if (p == node) {
        ready_now = false;
        continue;
      }
      if (!completed_or_running[p]) {
        ready_now = ready_after = false;
        break;
      }
    }
    // S is scored by the NPU work it holds: nodes newly unblocked that run
    // on the NPU. CPU members only occupy the non-critical processor.
    if (!ready_now && ready_after && g.nodes[succ].processor == Processor::NPU)
      sum += g.nodes[succ].duration;
  }
  return gp == Processor::CPU ? sum : -sum;
}

namespace {

struct SimState {
  std::vector<bool> completed;
  std::vector<bool> active;  // completed or running
  std::vector<int64_t> end_time;
  int64_t free_time[2] = {0, 0};
  int running_node[2] = {-1, -1};
  int finished = 0;

  explicit SimState(int n)
      : completed(n, false), active(n, false), end_time(n, 0) {}

  static int pidx(Processor p) { return p == Processor::NPU ? 0 : 1; }
};

void finish_report(ScheduleReport& rep) {
  rep.makespan = 0;
  rep.busy_npu = 0;
  rep.busy_cpu = 0;
  for (const auto& e : rep.events) {
    rep.makespan = std::max(rep.makespan, e.end);
    (e.processor == Processor::NPU ? rep.busy_npu : rep.busy_cpu) +=
        e.end - e.start;
  }
  std::sort(rep.events.begin(), rep.events.end(),
            [](const ScheduleEvent& a, const ScheduleEvent& b) {
              if (a.start != b.start) return a.start < b.start;
              return a.node < b.node;
            });
}

}  // namespace

ScheduleReport schedule_greedy(const DependencyGraph& g) {
  ScheduleReport rep;
  rep.scheduler = "greedy";
  SimState st(g.size());
  int64_t now = 0;

  while (st.finished < g.size()) {
    // complete everything ending at `now`
    for (int p = 0; p < 2; ++p) {
      const int r = st.running_node[p];
      if (r >= 0 && st.end_time[r] <= now) {
        st.completed[r] = true;
        st.running_node[p] = -1;
        ++st.finished;
      }
    }
    // dispatch, NPU first at equal timestamps
    for (Processor proc : {Processor::NPU, Processor::CPU}) {
      const int p = SimState::pidx(proc);
      if (st.running_node[p] >= 0) continue;
      int best = -1;
      int64_t best_c = 0;
      for (int u = 0; u < g.size(); ++u) {  // node order = (chunk, stage) order
        if (st.active[u] || g.nodes[u].processor != proc) continue;
        bool ready = true;
        for (int q : g.predecessors[u])
          if (!st.completed[q]) {
            ready = false;
            break;
          }
        if (!ready) continue;
        const int64_t c = contribution(g, u, st.active);
        if (best < 0 || c > best_c) {
          best = u;
          best_c = c;
        }
      }
      if (best >= 0) {
        st.active[best] = true;
        st.running_node[p] = best;
        st.end_time[best] = now + g.nodes[best].duration;
        st.free_time[p] = st.end_time[best];
        rep.events.push_back({best, proc, now, st.end_time[best]});
      }
    }
    // advance to the next completion
    int64_t next = std::numeric_limits<int64_t>::max();
    for (int p = 0; p < 2; ++p)
      if (st.running_node[p] >= 0)
        next = std::min(next, st.end_time[st.running_node[p]]);
    if (next == std::numeric_limits<int64_t>::max()) {
      if (st.finished < g.size())
        throw InvariantError("schedule_greedy: stalled with work remaining");
      break;
    }
    now = next;
  }
  finish_report(rep);
  return rep;
}

ScheduleReport schedule_inorder(const DependencyGraph& g) {
  // Strict program order: chunk-major, one subgraph at a time. The next
  // node is dispatched only once the previous one has finished, so a
  // processor idles whenever the program order hands work to the other one.
  // Dependencies always point backwards in program order, so every node is
  // data-ready when its turn comes and the makespan is the duration sum.
  ScheduleReport rep;
  rep.scheduler = "inorder";
  int64_t now = 0;
  for (int u = 0; u < g.size(); ++u) {
    for (int p : g.predecessors[u])
      if (p >= u)
        throw InvariantError("schedule_inorder: dependency ahead of program order");
    rep.events.push_back({u, g.nodes[u].processor, now, now + g.nodes[u].duration});
    now += g.nodes[u].duration;
  }
  finish_report(rep);
  return rep;
}

namespace {

struct BnbState {
  const DependencyGraph* g = nullptr;
  std::vector<int64_t> end_time;
  std::vector<int64_t> longest_path;  // dur(u) + max over successors
  std::vector<int64_t> remaining_work;  // per processor
  uint32_t scheduled = 0;
  int64_t free_time[2] = {0, 0};
  int64_t makespan = 0;
  int64_t best = std::numeric_limits<int64_t>::max();
  std::vector<int64_t> start_of;  // current assignment
  std::vector<int64_t> best_start;
};

void bnb_dfs(BnbState& s, int count) {
  const DependencyGraph& g = *s.g;
  if (count == g.size()) {
    if (s.makespan < s.best) {
      s.best = s.makespan;
      s.best_start = s.start_of;
    }
    return;
  }
  // processor-load and critical-path lower bounds
  for (int p = 0; p < 2; ++p)
    if (s.free_time[p] + s.remaining_work[p] >= s.best) return;
  if (s.makespan >= s.best) return;

  for (int u = 0; u < g.size(); ++u) {
    if (s.scheduled & (1u << u)) continue;
    bool ready = true;
    int64_t preds_end = 0;
    for (int q : g.predecessors[u]) {
      if (!(s.scheduled & (1u << q))) {
        ready = false;
        break;
      }
      preds_end = std::max(preds_end, s.end_time[q]);
    }
    if (!ready) continue;

    const int p = SimState::pidx(g.nodes[u].processor);
    const int64_t start = std::max(s.free_time[p], preds_end);
    if (start + s.longest_path[u] >= s.best) continue;

    const int64_t end = start + g.nodes[u].duration;
    const int64_t saved_free = s.free_time[p];
    const int64_t saved_makespan = s.makespan;
    s.scheduled |= (1u << u);
    s.end_time[u] = end;
    s.start_of[u] = start;
    s.free_time[p] = end;
    s.remaining_work[p] -= g.nodes[u].duration;
    s.makespan = std::max(s.makespan, end);

    bnb_dfs(s, count + 1);

    s.scheduled &= ~(1u << u);
    s.free_time[p] = saved_free;
    s.remaining_work[p] += g.nodes[u].duration;
    s.makespan = saved_makespan;
  }
}

}  // namespace

ScheduleReport schedule_optimal(const DependencyGraph& g, int max_nodes) {
  if (g.size() > max_nodes || g.size() > 25)
    throw ValueError("schedule_optimal: instance too large (" +
                     std::to_string(g.size()) + " nodes, limit " +
                     std::to_string(std::min(max_nodes, 25)) + ")");

  BnbState s;
  s.g = &g;
  s.end_time.assign(g.size(), 0);
  s.start_of.assign(g.size(), 0);
  s.remaining_work = {0, 0};
  for (const auto& n : g.nodes)
    s.remaining_work[SimState::pidx(n.processor)] += n.duration;

  // longest chain below each node, over all durations (processor-agnostic)
  s.longest_path.assign(g.size(), 0);
  for (int u = g.size() - 1; u >= 0; --u) {
    int64_t tail = 0;
    for (int v : g.successors[u]) tail = std::max(tail, s.longest_path[v]);
    s.longest_path[u] = g.nodes[u].duration + tail;
  }
  // successors always have higher index (edges go j-1 -> j), so the reverse
  // index sweep above is a valid reverse-topological order.

  s.best = schedule_greedy(g).makespan + 1;  // known upper bound
  s.best_start.assign(g.size(), 0);
  bnb_dfs(s, 0);

  ScheduleReport rep;
  rep.scheduler = "optimal";
  for (int u = 0; u < g.size(); ++u)
    rep.events.push_back({u, g.nodes[u].processor, s.best_start[u],
                          s.best_start[u] + g.nodes[u].duration});
  finish_report(rep);
  return rep;
}

void validate_schedule(const DependencyGraph& g, const ScheduleReport& rep) {
  if (static_cast<int>(rep.events.size()) != g.size())
    throw InvariantError("validate: event count differs from node count");

  std::vector<const ScheduleEvent*> by_node(g.size(), nullptr);
  for (const auto& e : rep.events) {
    if (e.node < 0 || e.node >= g.size())
      throw InvariantError("validate: event references unknown node");
    if (by_node[e.node])
      throw InvariantError("validate: node scheduled twice");
    by_node[e.node] = &e;
    if (e.processor != g.nodes[e.node].processor)
      throw InvariantError("validate: event on wrong processor");
    if (e.start < 0 || e.end - e.start != g.nodes[e.node].duration)
      throw InvariantError("validate: duration not conserved");
  }
  for (int u = 0; u < g.size(); ++u)
    for (int p : g.predecessors[u])
      if (by_node[u]->start < by_node[p]->end)
        throw InvariantError("validate: node starts before predecessor ends");

  for (Processor proc : {Processor::NPU, Processor::CPU}) {
    std::vector<const ScheduleEvent*> lane;
    for (const auto& e : rep.events)
      if (e.processor == proc) lane.push_back(&e);
    std::sort(lane.begin(), lane.end(),
              [](const ScheduleEvent* a, const ScheduleEvent* b) {
                return a->start < b->start;
              });
    for (size_t i = 1; i < lane.size(); ++i)
      if (lane[i]->start < lane[i - 1]->end)
        throw InvariantError("validate: overlapping events on one processor");
  }

  int64_t makespan = 0, busy_npu = 0, busy_cpu = 0;
  for (const auto& e : rep.events) {
    makespan = std::max(makespan, e.end);
    (e.processor == Processor::NPU ? busy_npu : busy_cpu) += e.end - e.start;
  }
  if (makespan != rep.makespan || busy_npu != rep.busy_npu ||
      busy_cpu != rep.busy_cpu)
    throw InvariantError("validate: busy-time or makespan bookkeeping is off");
}

}  // namespace npusim
