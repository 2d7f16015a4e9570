#pragma once

#include <deque>
#include <numeric>
#include <stdexcept>

namespace cdx {

struct CurriculumParams {
  double f0 = 200.0;       // initial force threshold, sim force units
  double f_final = 50.0;   // final force threshold
  double delta_f = 5.0;    // reduction per update
  int window = 5;          // FIFO success-rate window K
  double w_bar = 0.85;     // success-rate gate
  int delta_t_min = 50;    // min iterations between threshold updates
  int eval_interval = 10;  // evaluation cadence L, in iterations

  double gate_stage1 = 0.80;  // single-object success gate into stage 2
  double gate_stage2 = 0.70;  // clutter success gate into stage 3
};

/// Scheduler state for the staged training progression. The force threshold
/// only ever decreases, in steps of delta_f, clamped at f_final.
struct CurriculumState {
  int stage = 1;  // 1 single-object, 2 clutter, 3 safety
  double f = 200.0;
  std::deque<double> success_window;
  int delta_t = 0;

  double window_average() const {
    if (success_window.empty()) return 0.0;
    return std::accumulate(success_window.begin(), success_window.end(), 0.0) /
           static_cast<double>(success_window.size());
  }
};

inline CurriculumState make_curriculum_state(const CurriculumParams& p,
                                             int stage = 1) {
  CurriculumState s;
  s.stage = stage;
  s.f = p.f0;
  return s;
}

/// One training iteration elapsed.
inline CurriculumState tick(CurriculumState state) {
  state.delta_t += 1;
  return state;
}

/// Records an evaluation success rate; tightens the force threshold when the
/// window average clears the gate and enough iterations have passed.
inline CurriculumState record_eval(const CurriculumParams& p,
                                   CurriculumState state, double w) {
  if (w < 0.0 || w > 1.0)
    throw std::invalid_argument("success rate must be within [0, 1]");
  state.success_window.push_back(w);
  while (static_cast<int>(state.success_window.size()) > p.window)
    state.success_window.pop_front();
  if (state.window_average() > p.w_bar && state.delta_t > p.delta_t_min) {
    state.f = std::max(state.f - p.delta_f, p.f_final);
    state.delta_t = 0;
  }
  return state;
}

/// Stage progression; only forward transitions are legal.
inline CurriculumState stage_transition(const CurriculumParams& p,
                                        CurriculumState state, int new_stage) {
  if (new_stage < state.stage)
    throw std::invalid_argument("curriculum stages cannot move backwards");
  if (new_stage < 1 || new_stage > 3)
    throw std::invalid_argument("curriculum stage must be 1, 2 or 3");
  if (new_stage != state.stage) {
    state.stage = new_stage;
    state.success_window.clear();
    state.delta_t = 0;
    if (new_stage == 3) state.f = p.f0;
  }
  return state;
}

}  // namespace cdx
