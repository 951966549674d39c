/** Adam optimizer over a map of named parameter tensors. */

export class Adam {
  private readonly m = new Map<string, Float64Array>();
  private readonly v = new Map<string, Float64Array>();
  private step = 0;

  constructor(
    public learningRate: number,
    private readonly beta1 = 0.9,
    private readonly beta2 = 0.999,
    private readonly eps = 1e-8,
  ) {}

  /** Apply one update in place; missing gradients leave tensors untouched. */
  update(params: Map<string, Float64Array>, grads: Map<string, Float64Array>): void {
    this.step += 1;
    const correct1 = 1 - Math.pow(this.beta1, this.step);
    const correct2 = 1 - Math.pow(this.beta2, this.step);
    for (const [name, grad] of grads) {
      const param = params.get(name);
      if (param === undefined) throw new Error(`gradient for unknown parameter ${name}`);
      if (param.length !== grad.length) {
        throw new Error(`${name}: gradient length ${grad.length} != parameter ${param.length}`);
      }
      let m = this.m.get(name);
      let v = this.v.get(name);
      if (m === undefined || v === undefined) {
        m = new Float64Array(param.length);
        v = new Float64Array(param.length);
        this.m.set(name, m);
        this.v.set(name, v);
      }
      for (let i = 0; i < param.length; i++) {
        const g = grad[i];
        m[i] = this.beta1 * m[i] + (1 - this.beta1) * g;
        v[i] = this.beta2 * v[i] + (1 - this.beta2) * g * g;
        const mHat = m[i] / correct1;
        const vHat = v[i] / correct2;
        param[i] -= (this.learningRate * mHat) / (Math.sqrt(vHat) + this.eps);
      }
    }
  }
}
