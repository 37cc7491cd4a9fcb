// Rendering helpers. Everything from the API is treated as untrusted text,
// and exam payloads are additionally screened for grading-scheme fields that
// must never reach the browser.

const SCHEME_FIELDS = ['scheme', 'correct_options', 'criteria'] as const;

export function escapeHtml(text: string): string {
  return text
    .replaceAll('&', '&amp;')
    .replaceAll('<', '&lt;')
    .replaceAll('>', '&gt;')
    .replaceAll('"', '&quot;')
    .replaceAll("'", '&#39;');
}

/** Element with escaped text content; the cheap, uniform building block. */
export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function scanKeys(node: unknown, path: string, hits: string[]): void {
  if (Array.isArray(node)) {
    node.forEach((item, i) => scanKeys(item, `${path}[${i}]`, hits));
    return;
  }
  if (node === null || typeof node !== 'object') return;
  for (const [key, value] of Object.entries(node)) {
    if ((SCHEME_FIELDS as readonly string[]).includes(key)) {
      hits.push(`${path}.${key}`);
    }
    scanKeys(value, `${path}.${key}`, hits);
  }
}

/**
 * Defensive check that a server payload carries no grading-scheme fields.
 * The server already projects them away; if one ever shows up the client
 * refuses to render rather than leaking answers on screen.
 */
export function assertStudentSafe(payload: unknown): void {
  const hits: string[] = [];
  scanKeys(payload, '$', hits);
  if (hits.length > 0) {
    throw new Error(`refusing to render: scheme fields in payload (${hits.join(', ')})`);
  }
}
