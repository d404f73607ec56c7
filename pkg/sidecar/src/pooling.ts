/** Subword-to-token pooling: a token's served vector is the mean of its
 * contextual subword vectors. */

export function meanPool(rows: number[][]): number[] {
  if (rows.length === 0) {
    throw new Error("cannot pool zero subword vectors");
  }
  const dim = rows[0].length;
  const out = new Array<number>(dim).fill(0);
  for (const row of rows) {
    for (let d = 0; d < dim; d++) out[d] += row[d];
  }
  return out.map((x) => x / rows.length);
}

/** Serialize as IEEE-754 binary32 values (the wire number format). */
export function toFloat32(vector: number[]): number[] {
  return vector.map((x) => Math.fround(x));
}
