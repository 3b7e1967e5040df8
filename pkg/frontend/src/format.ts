/** Display helpers shared by the panels. */

/** Risks render as percentages with one decimal, e.g. 0.578 -> "57.8%". */
export function formatPercent(risk: number): string {
  return `${(risk * 100).toFixed(1)}%`;
}

/** Signed percentage-point delta, e.g. -0.023 -> "-2.3 pp". */
export function formatDelta(delta: number): string {
  const pp = delta * 100;
  const sign = pp > 0 ? "+" : "";
  return `${sign}${pp.toFixed(1)} pp`;
}

/**
 * Decile lookup against the harness boundaries file (11 ascending cut
 * points). Risks at or below a bin's upper edge belong to that bin; values
 * outside the observed range clamp to the outer deciles.
 */
export function decileForRisk(risk: number, boundaries: number[]): number {
  if (boundaries.length < 2) {
    return 1;
  }
  const bins = boundaries.length - 1;
  for (let d = 1; d < bins; d += 1) {
    const edge = boundaries[d];
    if (edge !== undefined && risk <= edge) {
      return d;
    }
  }
  return bins;
}
