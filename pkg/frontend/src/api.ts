import type { DecisionMessage, GatewayEvent, RunHandle } from "./types.js";

/** Thin gateway client; works in the browser and under node (fetch + streams). */
export class GatewayClient {
  constructor(public baseUrl: string) {}

  async createRun(
    phantom: Record<string, any>,
    config: Record<string, any>,
    runId?: string,
  ): Promise<RunHandle> {
    const res = await fetch(`${this.baseUrl}/runs`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ phantom, config, ...(runId ? { run_id: runId } : {}) }),
    });
    if (!res.ok) throw new Error(`createRun failed: ${res.status} ${await res.text()}`);
    return (await res.json()) as RunHandle;
  }

  async getRun(runId: string): Promise<RunHandle> {
    const res = await fetch(`${this.baseUrl}/runs/${runId}`);
    if (!res.ok) throw new Error(`getRun failed: ${res.status}`);
    return (await res.json()) as RunHandle;
  }

  async submitDecision(msg: DecisionMessage): Promise<boolean> {
    const res = await fetch(`${this.baseUrl}/runs/${msg.run_id}/decision`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({
        request_seq: msg.request_seq,
        verdict: msg.verdict,
        ...(msg.boxes ? { boxes: msg.boxes } : {}),
      }),
    });
    return res.ok;
  }

  async fetchArtifactText(runId: string, rel: string): Promise<string> {
    const res = await fetch(`${this.baseUrl}/runs/${runId}/artifacts/${rel}`);
    if (!res.ok) throw new Error(`artifact ${rel} failed: ${res.status}`);
    return await res.text();
  }

  async fetchArtifactJson(runId: string, rel: string): Promise<any> {
    return JSON.parse(await this.fetchArtifactText(runId, rel));
  }

  /** Subscribe to the event stream; resumes after `lastSeq`. Returns when the
   *  stream ends (run complete) or the signal aborts. */
  async streamEvents(
    runId: string,
    lastSeq: number,
    onEvent: (ev: GatewayEvent) => void,
    signal?: AbortSignal,
  ): Promise<void> {
    const res = await fetch(
      `${this.baseUrl}/runs/${runId}/events?from_seq=${lastSeq + 1}`,
      { signal },
    );
    if (!res.ok || !res.body) throw new Error(`streamEvents failed: ${res.status}`);
    const reader = res.body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    for (;;) {
      const { done, value } = await reader.read();
      if (done) break;
      buffer += decoder.decode(value, { stream: true });
      let idx: number;
      while ((idx = buffer.indexOf("\n\n")) >= 0) {
        const chunk = buffer.slice(0, idx);
        buffer = buffer.slice(idx + 2);
        for (const line of chunk.split("\n")) {
          if (line.startsWith("data: ")) {
            onEvent(JSON.parse(line.slice(6)) as GatewayEvent);
          }
        }
      }
    }
  }
}
