import { describe, expect, it } from 'vitest';
import { assertStudentSafe, el, escapeHtml } from '../../src/sanitize';

describe('escapeHtml', () => {
  it('neutralizes every HTML-significant character', () => {
    expect(escapeHtml(`<img src=x onerror="pwn('&')">`)).toBe(
      '&lt;img src=x onerror=&quot;pwn(&#39;&amp;&#39;)&quot;&gt;',
    );
  });

  it('leaves ordinary text alone', () => {
    expect(escapeHtml('definiția corectă (4 p)')).toBe('definiția corectă (4 p)');
  });
});

describe('el', () => {
  it('renders hostile text inert via textContent', () => {
    const node = el('p', 'explanation', '<script>document.title="pwn"</script>');
    expect(node.querySelector('script')).toBeNull();
    expect(node.innerHTML).toContain('&lt;script&gt;');
    expect(node.textContent).toContain('<script>');
  });
});

describe('assertStudentSafe', () => {
  const cleanExam = {
    exam_id: 'cs-2024-v1',
    office_points: 10,
    total_points: 30,
    sections: [
      {
        section_label: 'SUBIECTUL I',
        questions: [{ question_id: 'q1', kind: 'single_choice', options: [] }],
      },
    ],
  };

  it('accepts a projected exam', () => {
    expect(() => assertStudentSafe(cleanExam)).not.toThrow();
  });

  it.each(['scheme', 'correct_options', 'criteria'])(
    'rejects a payload smuggling %s, however deeply nested',
    (field) => {
      const tampered = structuredClone(cleanExam) as Record<string, unknown>;
      const sections = tampered.sections as Array<{ questions: Array<Record<string, unknown>> }>;
      sections[0]!.questions[0]![field] = ['b'];
      expect(() => assertStudentSafe(tampered)).toThrowError(
        new RegExp(`refusing to render.*${field}`),
      );
    },
  );

  it('ignores scheme-like words in values, only keys matter', () => {
    expect(() =>
      assertStudentSafe({ prompt: 'explicați schema de corectare (criteria, scheme)' }),
    ).not.toThrow();
  });
});
