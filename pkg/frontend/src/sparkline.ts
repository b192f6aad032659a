// Area-ratio series -> SVG path. Pure string math so fixtures stay stable.

export function sparklinePath(ratios: number[], width: number, height: number): string {
  if (ratios.length === 0) return "";
  const n = ratios.length;
  const points = ratios.map((r, i) => {
    const x = n === 1 ? 0 : (i * (width - 1)) / (n - 1);
    const y = (height - 1) * (1 - Math.min(1, Math.max(0, r)));
    return `${fmt(x)} ${fmt(y)}`;
  });
  return `M ${points[0]}` + points.slice(1).map((p) => ` L ${p}`).join("");
}

function fmt(v: number): string {
  const rounded = Math.round(v * 100) / 100;
  return String(rounded);
}
