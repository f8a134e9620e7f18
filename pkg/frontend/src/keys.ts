// Idempotency keys, one per user gesture. The key is minted when the
// gesture starts and stays pending until the server answers, so a double
// click or a retried timeout replays the same key instead of issuing a
// second command. A settled gesture gets a fresh key next time.

function randomToken(): string {
  const c = (globalThis as any).crypto;
  if (c?.randomUUID) return c.randomUUID();
  return Math.random().toString(36).slice(2) + Date.now().toString(36);
}

export class GestureKeys {
  private pending = new Map<string, string>();

  begin(gestureId: string): string {
    const existing = this.pending.get(gestureId);
    if (existing !== undefined) return existing;
    const key = `ui-${gestureId}-${randomToken()}`;
    this.pending.set(gestureId, key);
    return key;
  }

  // call once the server has answered, success or domain error alike;
  // either way the command was consumed
  settle(gestureId: string): void {
    this.pending.delete(gestureId);
  }

  isPending(gestureId: string): boolean {
    return this.pending.has(gestureId);
  }
}
